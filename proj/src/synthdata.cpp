#include "unlearn/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "binio.hpp"

namespace unlearn {

std::vector<int> Dataset::labels() const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const Sample& s : samples) out.push_back(s.label);
    return out;
}

std::vector<int> Dataset::bias_labels(BiasAxis axis) const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const Sample& s : samples) {
        switch (axis) {
            case BiasAxis::Marking: out.push_back(s.marking); break;
            case BiasAxis::Ruler: out.push_back(s.ruler); break;
            case BiasAxis::Instrument: out.push_back(s.instrument); break;
        }
    }
    return out;
}

int Dataset::axis_cardinality(BiasAxis axis) const {
    return axis == BiasAxis::Instrument ? n_instruments : 2;
}

namespace {

struct Rgb {
    double r, g, b;
};

// Border tints per instrument class. All of them stay clear of the violet
// band used by the marking detector (blue>0.5 & red>0.4 & green<0.35).
constexpr Rgb kInstrumentTints[8] = {
    {0.90, 0.25, 0.25}, {0.90, 0.60, 0.18}, {0.85, 0.85, 0.25}, {0.30, 0.80, 0.32},
    {0.22, 0.80, 0.78}, {0.25, 0.45, 0.90}, {0.55, 0.48, 0.85}, {0.90, 0.50, 0.72},
};

constexpr double kTintMargin = 4.0;

struct AssignDraw {
    int label;
    int marking;
    int ruler;
    int instrument;
};

double artefact_prob(double rate, double corr, int label, double malignant_fraction, const char* name) {
    const double pi = malignant_fraction;
    if (pi <= 0.0 || pi >= 1.0) return rate;
    const double cov = corr * std::sqrt(rate * (1.0 - rate)) * std::sqrt(pi * (1.0 - pi));
    double p = label == 1 ? rate + cov / pi : rate - cov / (1.0 - pi);
    if (p < -1e-9 || p > 1.0 + 1e-9) {
        throw ContractError(std::string(name) + " rate/correlation pair gives invalid probability " +
                            std::to_string(p));
    }
    return std::clamp(p, 0.0, 1.0);
}

std::vector<int> available_instruments(const DatasetRecipe& rec) {
    std::vector<int> avail;
    for (int c = 0; c < rec.n_instruments; ++c) {
        if (c != rec.instrument_holdout) avail.push_back(c);
    }
    return avail;
}

AssignDraw draw_assignment(const DatasetRecipe& rec, Rng& rng) {
    AssignDraw d;
    d.label = rng.bernoulli(rec.malignant_fraction) ? 1 : 0;
    d.marking =
        rng.bernoulli(artefact_prob(rec.marking_rate, rec.marking_correlation, d.label,
                                    rec.malignant_fraction, "marking")) ? 1 : 0;
    d.ruler = rng.bernoulli(artefact_prob(rec.ruler_rate, rec.ruler_correlation, d.label,
                                          rec.malignant_fraction, "ruler")) ? 1 : 0;
    if (rec.instrument_only >= 0) {
        d.instrument = rec.instrument_only;
        return d;
    }
    const std::vector<int> avail = available_instruments(rec);
    const double rho = rec.instrument_label_correlation;
    const std::size_t half = avail.size() / 2;
    const double p_upper = d.label == 1 ? (1.0 + rho) / 2.0 : (1.0 - rho) / 2.0;
    const bool upper = rng.bernoulli(p_upper);
    // Constant draw count either way so artefact overrides never desync.
    if (rho == 0.0 || avail.size() < 2) {
        d.instrument = avail[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(avail.size())))];
    } else if (upper) {
        d.instrument = avail[half + static_cast<std::size_t>(
                                        rng.uniform_int(static_cast<int>(avail.size() - half)))];
    } else {
        d.instrument = avail[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(half)))];
    }
    return d;
}

inline std::ptrdiff_t pix(int c, int y, int x, int H, int W) {
    return (static_cast<std::ptrdiff_t>(c) * H + y) * W + x;
}

void box_blur(Eigen::ArrayXd& px, int H, int W) {
    Eigen::ArrayXd src = px;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = std::clamp(y + dy, 0, H - 1);
                        const int xx = std::clamp(x + dx, 0, W - 1);
                        acc += src[pix(c, yy, xx, H, W)];
                    }
                }
                px[pix(c, y, x, H, W)] = acc / 9.0;
            }
        }
    }
}

void blend(Eigen::ArrayXd& px, int y, int x, int H, int W, const Rgb& color, double alpha) {
    px[pix(0, y, x, H, W)] = (1.0 - alpha) * px[pix(0, y, x, H, W)] + alpha * color.r;
    px[pix(1, y, x, H, W)] = (1.0 - alpha) * px[pix(1, y, x, H, W)] + alpha * color.g;
    px[pix(2, y, x, H, W)] = (1.0 - alpha) * px[pix(2, y, x, H, W)] + alpha * color.b;
}

Sample render_sample(const DatasetRecipe& rec, std::uint64_t geom_seed, const AssignDraw& d) {
    const int S = rec.image_size, H = S, W = S;
    Rng rng(geom_seed);
    Eigen::ArrayXd px(static_cast<Eigen::Index>(3) * H * W);

    // Skin background with uniform pixel noise.
    const Rgb skin{rng.uniform(0.80, 0.88), rng.uniform(0.58, 0.66), rng.uniform(0.48, 0.56)};
    const double noise_amp = rec.pixel_noise * 1.7;
    for (int c = 0; c < 3; ++c) {
        const double base = c == 0 ? skin.r : (c == 1 ? skin.g : skin.b);
        for (int i = 0; i < H * W; ++i) {
            px[static_cast<Eigen::Index>(c) * H * W + i] = base + rng.uniform(-noise_amp, noise_amp);
        }
    }

    // Lesion blob. Benign stays nearly circular; malignant picks up extra
    // harmonics (lobes) and darker mottling patches.
    const double scale = S / 32.0;
    const double cx = (S - 1) / 2.0 + rng.uniform(-2.0, 2.0) * scale;
    const double cy = (S - 1) / 2.0 + rng.uniform(-2.0, 2.0) * scale;
    const double radius = rng.uniform(0.26, 0.33) * S;
    double amp[6] = {0, 0, 0, 0, 0, 0};
    double phase[6];
    for (int k = 2; k <= 5; ++k) phase[k] = rng.uniform(0.0, 2.0 * M_PI);
    amp[2] = rng.uniform(0.010, 0.050);
    amp[3] = rng.uniform(0.010, 0.040);
    amp[4] = rng.uniform(0.005, 0.020);
    amp[5] = rng.uniform(0.005, 0.015);
    if (d.label == 1) {
        const double q = rec.lesion_irregularity;
        amp[3] += rng.uniform(0.05, 0.12) * q;
        amp[4] += rng.uniform(0.05, 0.12) * q;
        amp[5] += rng.uniform(0.03, 0.09) * q;
    }
    // Interior tone: malignant lesions run darker on average, with heavy
    // overlap so colour alone does not separate the classes.
    Rgb lesion{rng.uniform(0.40, 0.52), rng.uniform(0.26, 0.34), rng.uniform(0.16, 0.26)};
    const double darken = (d.label == 1 ? rng.uniform(0.03, 0.12) : rng.uniform(0.0, 0.05)) *
                          rec.lesion_irregularity;
    lesion.r *= 1.0 - darken;
    lesion.g *= 1.0 - darken;
    lesion.b *= 1.0 - 0.6 * darken;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double dist = std::sqrt(dx * dx + dy * dy);
            if (dist > radius * 1.45 + 1.0) continue;
            const double theta = std::atan2(dy, dx);
            double r_lim = 1.0;
            for (int k = 2; k <= 5; ++k) r_lim += amp[k] * std::sin(k * theta + phase[k]);
            r_lim *= radius;
            const double alpha = std::clamp(r_lim - dist + 0.5, 0.0, 1.0);
            if (alpha > 0.0) blend(px, y, x, H, W, lesion, alpha);
        }
    }
    if (d.label == 1) {
        const int n_mottles = 2 + rng.uniform_int(3);
        for (int m = 0; m < n_mottles; ++m) {
            const double mr = radius * rng.uniform(0.15, 0.32);
            const double md = radius * rng.uniform(0.0, 0.55);
            const double mth = rng.uniform(0.0, 2.0 * M_PI);
            const double darken = rng.uniform(0.40, 0.60) * rec.lesion_irregularity;
            const double mx = cx + md * std::cos(mth), my = cy + md * std::sin(mth);
            const int x0 = std::max(0, static_cast<int>(mx - mr - 1)), x1 = std::min(W - 1, static_cast<int>(mx + mr + 1));
            const int y0 = std::max(0, static_cast<int>(my - mr - 1)), y1 = std::min(H - 1, static_cast<int>(my + mr + 1));
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    const double dd = std::hypot(x - mx, y - my);
                    const double w = std::clamp(mr - dd + 0.5, 0.0, 1.0) * std::clamp(darken, 0.0, 0.9);
                    if (w <= 0.0) continue;
                    for (int c = 0; c < 3; ++c) {
                        px[pix(c, y, x, H, W)] *= 1.0 - w * 0.7;
                    }
                }
            }
        }
    }

    // Instrument rendering: class-specific blur level, then a border tint
    // ring. Artefacts are stamped afterwards so their pixels stay crisp.
    for (int p = 0; p < d.instrument % 3; ++p) box_blur(px, H, W);
    const Rgb tint = kInstrumentTints[d.instrument % 8];
    if (rec.instrument_tint > 0.0) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double bd = std::min(std::min(x, W - 1 - x), std::min(y, H - 1 - y));
                if (bd >= kTintMargin) continue;
                blend(px, y, x, H, W, tint, rec.instrument_tint * (1.0 - bd / kTintMargin));
            }
        }
    }

    // Artefact parameters are always drawn so that a plain/stamped pair
    // rendered from the same seed differs only by the stamp itself.
    const int ruler_edge = rng.uniform_int(4);
    const int ruler_offset = 1 + rng.uniform_int(2);
    const int ruler_thickness = 2 + rng.uniform_int(2);
    const int ruler_phase = rng.uniform_int(2);
    if (d.ruler == 1) {
        const Rgb dark{0.08, 0.08, 0.12}, light{0.92, 0.92, 0.95};
        for (int j = 0; j < S; ++j) {
            const Rgb& col = ((j / 2 + ruler_phase) % 2 == 0) ? dark : light;
            for (int t = 0; t < ruler_thickness; ++t) {
                int y = 0, x = 0;
                switch (ruler_edge) {
                    case 0: y = ruler_offset + t; x = j; break;         // top
                    case 1: y = H - 1 - ruler_offset - t; x = j; break; // bottom
                    case 2: x = ruler_offset + t; y = j; break;         // left
                    default: x = W - 1 - ruler_offset - t; y = j; break;
                }
                px[pix(0, y, x, H, W)] = col.r;
                px[pix(1, y, x, H, W)] = col.g;
                px[pix(2, y, x, H, W)] = col.b;
            }
        }
    }

    const int n_arcs = 1 + rng.uniform_int(2);
    struct Arc {
        double rad, th0, span, thick;
    };
    Arc arcs[3];
    for (auto& arc : arcs) {
        arc = Arc{radius * rng.uniform(1.30, 1.62), rng.uniform(0.0, 2.0 * M_PI), rng.uniform(0.6, 1.5),
                  rng.uniform(1.1, 1.6)};
    }
    // Brightness-matched to the skin tone: the marking reads as a chroma
    // signature, not a luminance edge.
    const Rgb violet{rng.uniform(0.58, 0.64), rng.uniform(0.20, 0.26), rng.uniform(0.88, 0.94)};
    if (d.marking == 1) {
        for (int a = 0; a < n_arcs; ++a) {
            const Arc& arc = arcs[a];
            const double step = 0.4 / arc.rad;
            for (double th = arc.th0; th <= arc.th0 + arc.span; th += step) {
                const double mx = cx + arc.rad * std::cos(th);
                const double my = cy + arc.rad * std::sin(th);
                const int x0 = std::max(0, static_cast<int>(mx - arc.thick)), x1 = std::min(W - 1, static_cast<int>(mx + arc.thick));
                const int y0 = std::max(0, static_cast<int>(my - arc.thick)), y1 = std::min(H - 1, static_cast<int>(my + arc.thick));
                for (int y = y0; y <= y1; ++y) {
                    for (int x = x0; x <= x1; ++x) {
                        const double dd = std::hypot(x - mx, y - my);
                        const double alpha = std::clamp(arc.thick / 2.0 - dd + 0.5, 0.0, 1.0) * 0.92;
                        if (alpha > 0.0) blend(px, y, x, H, W, violet, alpha);
                    }
                }
            }
        }
    }

    px = px.min(1.0).max(0.0);
    return Sample{Tensor({3, H, W}, std::move(px)), d.label, d.marking, d.ruler, d.instrument};
}

void validate_recipe(const DatasetRecipe& rec) {
    if (rec.n_samples < 0) throw ContractError("recipe: n_samples must be nonnegative");
    if (rec.image_size < 16) throw ContractError("recipe: image_size must be at least 16");
    if (rec.malignant_fraction < 0.0 || rec.malignant_fraction > 1.0) {
        throw ContractError("recipe: malignant_fraction must be in [0, 1]");
    }
    if (rec.n_instruments < 2) throw ContractError("recipe: n_instruments must be at least 2");
    if (rec.instrument_only >= rec.n_instruments || rec.instrument_holdout >= rec.n_instruments) {
        throw ContractError("recipe: instrument class out of range");
    }
    for (double rho : {rec.marking_correlation, rec.ruler_correlation, rec.instrument_label_correlation}) {
        if (rho < -1.0 || rho > 1.0) throw ContractError("recipe: correlations must be in [-1, 1]");
    }
    for (double rate : {rec.marking_rate, rec.ruler_rate}) {
        if (rate < 0.0 || rate > 1.0) throw ContractError("recipe: artefact rates must be in [0, 1]");
    }
    // Probability validity of the (rate, correlation) pairs.
    for (int label : {0, 1}) {
        artefact_prob(rec.marking_rate, rec.marking_correlation, label, rec.malignant_fraction, "marking");
        artefact_prob(rec.ruler_rate, rec.ruler_correlation, label, rec.malignant_fraction, "ruler");
    }
}

} // namespace

Dataset generate(const DatasetRecipe& recipe) {
    validate_recipe(recipe);
    Dataset ds;
    ds.n_instruments = recipe.n_instruments;
    ds.samples.reserve(static_cast<std::size_t>(recipe.n_samples));
    for (int i = 0; i < recipe.n_samples; ++i) {
        Rng assign_rng(mix_seed(recipe.seed, "assign", static_cast<std::uint64_t>(i)));
        const AssignDraw d = draw_assignment(recipe, assign_rng);
        ds.samples.push_back(render_sample(recipe, mix_seed(recipe.seed, "geom", static_cast<std::uint64_t>(i)), d));
    }
    return ds;
}

std::pair<Dataset, Dataset> generate_paired_test(const DatasetRecipe& recipe, BiasAxis artefact) {
    validate_recipe(recipe);
    if (artefact != BiasAxis::Marking && artefact != BiasAxis::Ruler) {
        throw ContractError("paired test supports the marking and ruler axes");
    }
    Dataset plain, stamped;
    plain.n_instruments = stamped.n_instruments = recipe.n_instruments;
    for (int i = 0; i < recipe.n_samples; ++i) {
        Rng assign_rng(mix_seed(recipe.seed, "assign", static_cast<std::uint64_t>(i)));
        AssignDraw base = draw_assignment(recipe, assign_rng);
        base.marking = 0;
        base.ruler = 0;
        AssignDraw with = base;
        (artefact == BiasAxis::Marking ? with.marking : with.ruler) = 1;
        const std::uint64_t geom = mix_seed(recipe.seed, "geom", static_cast<std::uint64_t>(i));
        plain.samples.push_back(render_sample(recipe, geom, base));
        stamped.samples.push_back(render_sample(recipe, geom, with));
    }
    return {std::move(plain), std::move(stamped)};
}

Tensor flip_image(const Tensor& image, bool horizontal, bool vertical) {
    if (image.rank() != 3) throw DimensionError("flip_image expects [CxHxW], got " + shape_str(image.shape()));
    const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
    Eigen::ArrayXd out(image.size());
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y) {
            const int sy = vertical ? H - 1 - y : y;
            for (int x = 0; x < W; ++x) {
                const int sx = horizontal ? W - 1 - x : x;
                out[pix(c, y, x, H, W)] = image.values()[pix(c, sy, sx, H, W)];
            }
        }
    }
    return Tensor(image.shape(), std::move(out));
}

Dataset skew(const Dataset& dataset, BiasAxis artefact, int d, std::uint64_t seed) {
    if (artefact != BiasAxis::Marking && artefact != BiasAxis::Ruler) {
        throw ContractError("skew applies to the marking and ruler axes");
    }
    if (d < 0) throw ContractError("skew duplication count must be nonnegative");
    Dataset out;
    out.n_instruments = dataset.n_instruments;
    std::uint64_t aug_index = 0;
    for (const Sample& s : dataset.samples) {
        const int flag = artefact == BiasAxis::Marking ? s.marking : s.ruler;
        if (s.label == 0 && flag == 1) continue;
        out.samples.push_back(s);
        if (s.label == 1 && flag == 1) {
            for (int j = 0; j < d; ++j) {
                Rng rng(mix_seed(seed, "skew-aug", aug_index++));
                Sample copy = s;
                copy.image = flip_image(s.image, rng.bernoulli(0.5), rng.bernoulli(0.5));
                copy.image.values() = (copy.image.values() + rng.uniform(-0.05, 0.05)).min(1.0).max(0.0);
                out.samples.push_back(std::move(copy));
            }
        }
    }
    return out;
}

std::pair<std::vector<int>, std::vector<bool>> instrument_proxy_labels(
    const std::vector<std::pair<int, int>>& image_dims, int min_class_count) {
    std::map<std::pair<int, int>, int> counts;
    for (const auto& dims : image_dims) ++counts[dims];

    std::vector<std::pair<std::pair<int, int>, int>> ordered(counts.begin(), counts.end());
    std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    std::map<std::pair<int, int>, int> class_of;
    int next = 0;
    for (const auto& [dims, count] : ordered) {
        class_of[dims] = count >= min_class_count ? next++ : -1;
    }

    std::vector<int> labels(image_dims.size());
    std::vector<bool> kept(image_dims.size());
    for (std::size_t i = 0; i < image_dims.size(); ++i) {
        labels[i] = class_of[image_dims[i]];
        kept[i] = labels[i] >= 0;
    }
    return {std::move(labels), std::move(kept)};
}

namespace {

// A run of high-contrast alternating differences along an edge-adjacent
// line is what distinguishes a ruler band from lesions or arcs that merely
// cross the border region.
bool ruler_line(const std::vector<double>& line) {
    constexpr double kSignificant = 0.15;
    int alternations = 0;
    int last_sign = 0;
    double sq_sum = 0.0;
    for (std::size_t j = 0; j + 1 < line.size(); ++j) {
        const double diff = line[j + 1] - line[j];
        sq_sum += diff * diff;
        if (std::abs(diff) > kSignificant) {
            const int sign = diff > 0 ? 1 : -1;
            if (last_sign != 0 && sign != last_sign) ++alternations;
            last_sign = sign;
        }
    }
    const double mean_sq = sq_sum / static_cast<double>(line.size() - 1);
    return alternations >= 6 && mean_sq > 0.02;
}

} // namespace

int colour_threshold_label(const Tensor& image, BiasAxis artefact) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw DimensionError("colour_threshold_label expects [3xHxW], got " + shape_str(image.shape()));
    }
    const int H = image.dim(1), W = image.dim(2);
    const auto& v = image.values();

    if (artefact == BiasAxis::Marking) {
        int violet = 0;
        for (int i = 0; i < H * W; ++i) {
            const double r = v[i], g = v[H * W + i], b = v[2 * H * W + i];
            if (b > 0.5 && r > 0.4 && g < 0.35) ++violet;
        }
        return violet > 0.005 * H * W ? 1 : 0;
    }
    if (artefact == BiasAxis::Ruler) {
        auto gray = [&](int y, int x) {
            return (v[pix(0, y, x, H, W)] + v[pix(1, y, x, H, W)] + v[pix(2, y, x, H, W)]) / 3.0;
        };
        constexpr int kMargin = 6;
        std::vector<double> line;
        for (int y = 0; y < H; ++y) {
            if (y >= kMargin && y < H - kMargin) continue;
            line.clear();
            for (int x = 0; x < W; ++x) line.push_back(gray(y, x));
            if (ruler_line(line)) return 1;
        }
        for (int x = 0; x < W; ++x) {
            if (x >= kMargin && x < W - kMargin) continue;
            line.clear();
            for (int y = 0; y < H; ++y) line.push_back(gray(y, x));
            if (ruler_line(line)) return 1;
        }
        return 0;
    }
    throw ContractError("colour_threshold_label handles the marking and ruler axes only");
}

ClassWeights class_weights(const std::vector<int>& labels, int n_classes) {
    if (n_classes < 2) throw ContractError("class_weights: need at least 2 classes");
    std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
    for (int y : labels) {
        if (y < 0 || y >= n_classes) {
            throw ContractError("class_weights: label " + std::to_string(y) + " out of range");
        }
        ++counts[static_cast<std::size_t>(y)];
    }
    ClassWeights w;
    w.weights.resize(static_cast<std::size_t>(n_classes));
    for (std::size_t n = 0; n < w.weights.size(); ++n) {
        if (counts[n] == 0) {
            w.weights[n] = 1.0;
            w.has_absent_class = true;
        } else {
            w.weights[n] = 1.0 / static_cast<double>(counts[n]);
        }
    }
    return w;
}

namespace {
constexpr char kImagesMagic[8] = {'U', 'L', 'A', 'B', 'I', 'M', 'G', '1'};
} // namespace

void save_datasets(const std::vector<std::pair<std::string, const Dataset*>>& splits,
                   const std::filesystem::path& dir) {
    if (splits.empty()) throw ContractError("save_datasets: nothing to save");
    std::filesystem::create_directories(dir);

    int C = -1, H = -1, W = -1, n_instruments = 1;
    std::uint64_t total = 0;
    for (const auto& [name, ds] : splits) {
        n_instruments = std::max(n_instruments, ds->n_instruments);
        for (const Sample& s : ds->samples) {
            if (C < 0) {
                C = s.image.dim(0);
                H = s.image.dim(1);
                W = s.image.dim(2);
            } else if (s.image.shape() != Shape{C, H, W}) {
                throw ContractError("save_datasets: mixed image shapes");
            }
            ++total;
        }
    }
    if (C < 0) throw ContractError("save_datasets: all splits are empty");

    std::ofstream bin(dir / "images.bin", std::ios::binary);
    if (!bin) throw ContractError("cannot write " + (dir / "images.bin").string());
    bin.write(kImagesMagic, 8);
    binio::write_u64(bin, total);
    binio::write_u64(bin, static_cast<std::uint64_t>(C));
    binio::write_u64(bin, static_cast<std::uint64_t>(H));
    binio::write_u64(bin, static_cast<std::uint64_t>(W));
    binio::write_u64(bin, static_cast<std::uint64_t>(n_instruments));

    std::ofstream manifest(dir / "manifest.csv");
    if (!manifest) throw ContractError("cannot write " + (dir / "manifest.csv").string());
    manifest << "id,label,marking,ruler,instrument,split\n";
    std::uint64_t id = 0;
    for (const auto& [name, ds] : splits) {
        for (const Sample& s : ds->samples) {
            binio::write_f64_block(bin, s.image.values());
            manifest << id++ << ',' << s.label << ',' << s.marking << ',' << s.ruler << ','
                     << s.instrument << ',' << name << '\n';
        }
    }
    if (!bin || !manifest) throw ContractError("failed writing dataset to " + dir.string());
}

std::map<std::string, Dataset> load_datasets(const std::filesystem::path& dir) {
    std::ifstream bin(dir / "images.bin", std::ios::binary);
    if (!bin) throw ContractError("cannot open " + (dir / "images.bin").string());
    char magic[8];
    bin.read(magic, 8);
    if (!bin || std::memcmp(magic, kImagesMagic, 8) != 0) {
        throw ParseError((dir / "images.bin").string() + " is not a dataset image file");
    }
    const std::uint64_t total = binio::read_u64(bin);
    const int C = static_cast<int>(binio::read_u64(bin));
    const int H = static_cast<int>(binio::read_u64(bin));
    const int W = static_cast<int>(binio::read_u64(bin));
    const int n_instruments = static_cast<int>(binio::read_u64(bin));

    std::ifstream manifest(dir / "manifest.csv");
    if (!manifest) throw ContractError("cannot open " + (dir / "manifest.csv").string());
    std::string header;
    std::getline(manifest, header);
    if (header != "id,label,marking,ruler,instrument,split") {
        throw ParseError((dir / "manifest.csv").string() + ": unexpected header '" + header + "'");
    }

    std::map<std::string, Dataset> out;
    std::string row;
    std::uint64_t rows = 0;
    while (std::getline(manifest, row)) {
        if (row.empty()) continue;
        std::istringstream fields(row);
        std::string id, label, marking, ruler, instrument, split;
        if (!std::getline(fields, id, ',') || !std::getline(fields, label, ',') ||
            !std::getline(fields, marking, ',') || !std::getline(fields, ruler, ',') ||
            !std::getline(fields, instrument, ',') || !std::getline(fields, split)) {
            throw ParseError((dir / "manifest.csv").string() + ": malformed row '" + row + "'");
        }
        Eigen::ArrayXd values(static_cast<Eigen::Index>(C) * H * W);
        binio::read_f64_block(bin, values);
        if (!bin) throw ParseError((dir / "images.bin").string() + ": truncated image data");
        Dataset& ds = out[split];
        ds.n_instruments = n_instruments;
        ds.samples.push_back(Sample{Tensor({C, H, W}, std::move(values)), std::stoi(label),
                                    std::stoi(marking), std::stoi(ruler), std::stoi(instrument)});
        ++rows;
    }
    if (rows != total) {
        throw ParseError(dir.string() + ": manifest rows (" + std::to_string(rows) +
                         ") disagree with image count (" + std::to_string(total) + ")");
    }
    return out;
}

} // namespace unlearn
