#include "unlearn/models.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace unlearn {

std::string to_string(Method m) {
    switch (m) {
        case Method::LNTL: return "lntl";
        case Method::TABE: return "tabe";
        case Method::CLGR: return "clgr";
    }
    throw ContractError("unknown method");
}

Method method_from_string(const std::string& s) {
    if (s == "lntl") return Method::LNTL;
    if (s == "tabe") return Method::TABE;
    if (s == "clgr") return Method::CLGR;
    throw ParseError("unknown method '" + s + "' (expected lntl, tabe or clgr)");
}

std::string to_string(BiasAxis a) {
    switch (a) {
        case BiasAxis::Marking: return "marking";
        case BiasAxis::Ruler: return "ruler";
        case BiasAxis::Instrument: return "instrument";
    }
    throw ContractError("unknown bias axis");
}

BiasAxis axis_from_string(const std::string& s) {
    if (s == "marking") return BiasAxis::Marking;
    if (s == "ruler") return BiasAxis::Ruler;
    if (s == "instrument") return BiasAxis::Instrument;
    throw ParseError("unknown bias axis '" + s + "' (expected marking, ruler or instrument)");
}

namespace {

int conv_out(int size, int kernel) { return size - kernel + 1; }
int pool_out(int size, int pool) { return (size - pool) / pool + 1; }

} // namespace

ModelBundle::ModelBundle(BundleConfig config, std::uint64_t seed) : cfg_(std::move(config)) {
    const int k = cfg_.kernel_size;
    int s = cfg_.image_size;
    s = pool_out(conv_out(s, k), cfg_.pool);
    s = pool_out(conv_out(s, k), cfg_.pool);
    if (s < 1) throw DimensionError("image size too small for the conv stack");
    const int flat = cfg_.conv2_filters * s * s;

    Rng rng(mix_seed(seed, "model-init"));
    conv1_ = init_weight({cfg_.conv1_filters, cfg_.in_channels, k, k}, cfg_.in_channels * k * k, rng);
    conv2_ = init_weight({cfg_.conv2_filters, cfg_.conv1_filters, k, k}, cfg_.conv1_filters * k * k, rng);
    proj_ = LinearLayer::init(flat, cfg_.feature_dim, rng);
    primary_ = LinearLayer::init(cfg_.feature_dim, cfg_.n_primary_classes, rng);
    for (const AuxHeadSpec& spec : cfg_.aux_heads) {
        if (spec.n_classes < 2) throw ContractError("aux head needs at least 2 classes");
        aux_.push_back(AuxHead{LinearLayer::init(cfg_.feature_dim, spec.n_classes, rng), spec.method, spec.axis});
    }
}

Tensor ModelBundle::features(const Tensor& batch) const {
    if (batch.rank() != 4) {
        throw DimensionError("model input must be [BxCxHxW], got " + shape_str(batch.shape()));
    }
    if (batch.dim(1) != cfg_.in_channels || batch.dim(2) != cfg_.image_size || batch.dim(3) != cfg_.image_size) {
        throw DimensionError("model input " + shape_str(batch.shape()) + " does not match configured " +
                             shape_str({cfg_.in_channels, cfg_.image_size, cfg_.image_size}));
    }
    // Center pixels: the raw [0,1] image's DC component otherwise dominates
    // every conv pre-activation and leaves training stuck at its plateau.
    Tensor x = add(batch, Tensor::full(batch.shape(), -0.5));
    x = max_pool2d(relu(conv2d(x, conv1_)), cfg_.pool);
    x = max_pool2d(relu(conv2d(x, conv2_)), cfg_.pool);
    return relu(proj_.forward(flatten(x)));
}

ForwardResult ModelBundle::forward(const Tensor& batch, double reversal_scale) const {
    ForwardResult out;
    out.features = features(batch);
    out.primary_logits = primary_.forward(out.features);
    out.aux_logits.reserve(aux_.size());
    for (const AuxHead& head : aux_) {
        const Tensor in =
            head.method == Method::TABE ? out.features : grad_reverse(out.features, reversal_scale);
        out.aux_logits.push_back(head.layer.forward(in));
    }
    return out;
}

std::vector<Tensor> ModelBundle::extractor_parameters() const {
    return {conv1_, conv2_, proj_.weight, proj_.bias};
}

std::vector<std::pair<std::string, Tensor>> ModelBundle::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> named = {
        {"extractor.conv1", conv1_},
        {"extractor.conv2", conv2_},
        {"extractor.proj.weight", proj_.weight},
        {"extractor.proj.bias", proj_.bias},
        {"primary.weight", primary_.weight},
        {"primary.bias", primary_.bias},
    };
    for (std::size_t i = 0; i < aux_.size(); ++i) {
        named.emplace_back("aux" + std::to_string(i) + ".weight", aux_[i].layer.weight);
        named.emplace_back("aux" + std::to_string(i) + ".bias", aux_[i].layer.bias);
    }
    return named;
}

namespace {

constexpr char kMagic[8] = {'U', 'L', 'A', 'B', 'M', 'D', 'L', '1'};

std::uint64_t to_le(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) r = (r << 8) | ((v >> (8 * i)) & 0xff);
        return r;
    }
}

void write_u64_le(std::ostream& os, std::uint64_t v) {
    const std::uint64_t le = to_le(v);
    os.write(reinterpret_cast<const char*>(&le), 8);
}

std::uint64_t read_u64_le(std::istream& is) {
    std::uint64_t le = 0;
    is.read(reinterpret_cast<char*>(&le), 8);
    return to_le(le);
}

void write_f64_le(std::ostream& os, const Eigen::ArrayXd& a) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        write_u64_le(os, std::bit_cast<std::uint64_t>(a[i]));
    }
}

void read_f64_le(std::istream& is, Eigen::ArrayXd& a) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        a[i] = std::bit_cast<double>(read_u64_le(is));
    }
}

} // namespace

void ModelBundle::save(const std::filesystem::path& file) const {
    nlohmann::ordered_json manifest;
    manifest["config"] = {
        {"image_size", cfg_.image_size},     {"in_channels", cfg_.in_channels},
        {"conv1_filters", cfg_.conv1_filters}, {"conv2_filters", cfg_.conv2_filters},
        {"kernel_size", cfg_.kernel_size},   {"pool", cfg_.pool},
        {"feature_dim", cfg_.feature_dim},   {"n_primary_classes", cfg_.n_primary_classes},
    };
    manifest["config"]["aux_heads"] = nlohmann::ordered_json::array();
    for (const AuxHeadSpec& spec : cfg_.aux_heads) {
        manifest["config"]["aux_heads"].push_back(
            {{"method", to_string(spec.method)}, {"axis", to_string(spec.axis)}, {"n_classes", spec.n_classes}});
    }

    const auto named = named_parameters();
    std::uint64_t offset = 0;
    manifest["tensors"] = nlohmann::ordered_json::array();
    for (const auto& [name, t] : named) {
        manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.size()) * 8;
    }

    const std::string text = manifest.dump();
    std::ofstream os(file, std::ios::binary);
    if (!os) throw ContractError("cannot open '" + file.string() + "' for writing");
    os.write(kMagic, 8);
    write_u64_le(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : named) write_f64_le(os, t.values());
    if (!os) throw ContractError("failed writing '" + file.string() + "'");
}

ModelBundle ModelBundle::load(const std::filesystem::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw ContractError("cannot open '" + file.string() + "'");
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) {
        throw ParseError("'" + file.string() + "' is not a model bundle file");
    }
    const std::uint64_t len = read_u64_le(is);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    nlohmann::json manifest = nlohmann::json::parse(text);

    BundleConfig cfg;
    const auto& jc = manifest.at("config");
    cfg.image_size = jc.at("image_size");
    cfg.in_channels = jc.at("in_channels");
    cfg.conv1_filters = jc.at("conv1_filters");
    cfg.conv2_filters = jc.at("conv2_filters");
    cfg.kernel_size = jc.at("kernel_size");
    cfg.pool = jc.at("pool");
    cfg.feature_dim = jc.at("feature_dim");
    cfg.n_primary_classes = jc.at("n_primary_classes");
    for (const auto& jh : jc.at("aux_heads")) {
        cfg.aux_heads.push_back(AuxHeadSpec{method_from_string(jh.at("method")),
                                            axis_from_string(jh.at("axis")), jh.at("n_classes")});
    }

    ModelBundle bundle(cfg, 0);
    auto named = bundle.named_parameters();
    if (manifest.at("tensors").size() != named.size()) {
        throw ParseError("'" + file.string() + "': expected " + std::to_string(named.size()) + " tensors");
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
        const auto& jt = manifest.at("tensors").at(i);
        auto& [name, t] = named[i];
        if (jt.at("name") != name || Shape(jt.at("shape")) != t.shape()) {
            throw ParseError("'" + file.string() + "': tensor " + std::to_string(i) + " does not match '" +
                             name + "'");
        }
        read_f64_le(is, t.values());
    }
    if (!is) throw ParseError("'" + file.string() + "': truncated tensor data");
    return bundle;
}

} // namespace unlearn
