#pragma once

// Synthetic datasets with known 2-D latent structure, the random orthonormal
// embedding into input space, anchor selection, and CSV import/export.
//
// Generators draw from the rng in a fixed order (embedding first, then one
// draw block per sample), so for a given seed the embedding is independent of
// n and the first k samples of a larger dataset equal the k-sample dataset.
// Train/test splits therefore come from one generator call, sliced.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "vaells/common.hpp"
#include "vaells/csv.hpp"
#include "vaells/linalg.hpp"

namespace vaells {

enum class DatasetKind { swiss_roll, circles, glyphs };

inline DatasetKind dataset_kind_from_string(const std::string& s) {
    if (s == "swiss_roll") return DatasetKind::swiss_roll;
    if (s == "circles") return DatasetKind::circles;
    if (s == "glyphs") return DatasetKind::glyphs;
    throw config_error("unknown dataset kind: " + s);
}

inline const char* to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::swiss_roll: return "swiss_roll";
        case DatasetKind::circles: return "circles";
        default: return "glyphs";
    }
}

struct LabeledDataset {
    DatasetKind kind = DatasetKind::swiss_roll;
    std::vector<Vec> inputs;    // N rows of dimension D
    std::vector<int> labels;    // N
    std::vector<Vec> latents;   // ground-truth 2-D latents; empty when absent
    Mat embedding;              // D x 2 with orthonormal columns; 0x0 when absent
    // Glyph mode only: the unrotated base image and per-sample anchor groups.
    std::size_t glyph_side = 0;
    Vec base_glyph;
    std::vector<std::vector<Vec>> sample_anchors;

    std::size_t size() const { return inputs.size(); }
    std::size_t data_dim() const { return inputs.empty() ? 0 : inputs[0].size(); }
    bool has_ground_truth() const { return !latents.empty() && embedding.count() > 0; }
};

namespace detail {

// D x 2 random map with orthonormal columns (Gram-Schmidt on normal draws).
inline Mat random_embedding(std::size_t data_dim, Rng& rng) {
    Vec g0(data_dim), g1(data_dim);
    for (std::size_t i = 0; i < data_dim; ++i) g0[i] = rng.normal();
    for (std::size_t i = 0; i < data_dim; ++i) g1[i] = rng.normal();
    const double n0 = norm2(g0);
    g0 *= 1.0 / n0;
    const double proj = dot(g1, g0);
    for (std::size_t i = 0; i < data_dim; ++i) g1[i] -= proj * g0[i];
    const double n1 = norm2(g1);
    g1 *= 1.0 / n1;
    Mat e(data_dim, 2);
    for (std::size_t i = 0; i < data_dim; ++i) {
        e(i, 0) = g0[i];
        e(i, 1) = g1[i];
    }
    return e;
}

inline Vec embed(const Mat& e, const Vec& latent) { return matvec(e, latent); }

}  // namespace detail

inline constexpr std::size_t kEmbeddedDataDim = 20;
inline constexpr double kSwissRollLow = 1.5 * M_PI;
inline constexpr double kSwissRollHigh = 4.5 * M_PI;

// Spiral r(t)*(cos t, sin t) with t ~ Unif[1.5pi, 4.5pi], r(t) = t/(4.5pi),
// embedded into 20 dimensions. Single class.
inline LabeledDataset gen_swiss_roll(std::size_t n, Rng& rng) {
    LabeledDataset ds;
    ds.kind = DatasetKind::swiss_roll;
    ds.embedding = detail::random_embedding(kEmbeddedDataDim, rng);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = rng.uniform(kSwissRollLow, kSwissRollHigh);
        const double r = t / kSwissRollHigh;
        Vec latent{r * std::cos(t), r * std::sin(t)};
        ds.inputs.push_back(detail::embed(ds.embedding, latent));
        ds.latents.push_back(std::move(latent));
        ds.labels.push_back(0);
    }
    return ds;
}

inline constexpr double kCircleRadii[2] = {0.5, 1.0};

// Two concentric circles, radius 0.5 (class 0) and 1.0 (class 1), samples
// alternating class so any prefix stays balanced.
inline LabeledDataset gen_concentric_circles(std::size_t n, Rng& rng) {
    LabeledDataset ds;
    ds.kind = DatasetKind::circles;
    ds.embedding = detail::random_embedding(kEmbeddedDataDim, rng);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        const double angle = rng.uniform(0.0, 2.0 * M_PI);
        const double r = kCircleRadii[label];
        Vec latent{r * std::cos(angle), r * std::sin(angle)};
        ds.inputs.push_back(detail::embed(ds.embedding, latent));
        ds.latents.push_back(std::move(latent));
        ds.labels.push_back(label);
    }
    return ds;
}

// Rotates a side x side image by `degrees` about its center with bilinear
// interpolation; pixels pulled from outside the grid read as 0.
inline Vec rotate_bilinear(const Vec& image, std::size_t side, double degrees) {
    if (image.size() != side * side)
        throw dim_error("rotate_bilinear: image size does not match side");
    const double rad = degrees * M_PI / 180.0;
    const double cr = std::cos(rad), sr = std::sin(rad);
    const double cx = (static_cast<double>(side) - 1.0) / 2.0;
    Vec out(side * side);
    for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
            // Inverse-rotate the output pixel into source coordinates.
            const double dy = static_cast<double>(r) - cx;
            const double dx = static_cast<double>(c) - cx;
            const double sy = cx + (cr * dy + sr * dx);
            const double sx = cx + (-sr * dy + cr * dx);
            const double fy = std::floor(sy), fx = std::floor(sx);
            const double wy = sy - fy, wx = sx - fx;
            auto at = [&](double yy, double xx) -> double {
                if (yy < 0.0 || xx < 0.0 || yy >= static_cast<double>(side) ||
                    xx >= static_cast<double>(side))
                    return 0.0;
                return image[static_cast<std::size_t>(yy) * side +
                             static_cast<std::size_t>(xx)];
            };
            out[r * side + c] = (1.0 - wy) * ((1.0 - wx) * at(fy, fx) + wx * at(fy, fx + 1.0)) +
                                wy * ((1.0 - wx) * at(fy + 1.0, fx) + wx * at(fy + 1.0, fx + 1.0));
        }
    }
    return out;
}

namespace detail {

// Asymmetric test pattern: a half-bar to the right of center plus a soft
// blob in the upper-left quadrant, values in [0,1].
inline Vec base_glyph_image(std::size_t side) {
    Vec img(side * side);
    const double cx = (static_cast<double>(side) - 1.0) / 2.0;
    const double bar_half_height = static_cast<double>(side) / 10.0;
    const double blob_cy = cx - static_cast<double>(side) / 4.0;
    const double blob_cx = cx - static_cast<double>(side) / 5.0;
    const double blob_sigma = static_cast<double>(side) / 9.0;
    for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
            double v = 0.0;
            const double y = static_cast<double>(r), x = static_cast<double>(c);
            if (std::abs(y - cx) <= bar_half_height && x >= cx &&
                x <= static_cast<double>(side) - 2.0)
                v = 1.0;
            const double d2 = (y - blob_cy) * (y - blob_cy) + (x - blob_cx) * (x - blob_cx);
            v += 0.85 * std::exp(-d2 / (2.0 * blob_sigma * blob_sigma));
            img[r * side + c] = std::min(1.0, v);
        }
    }
    return img;
}

}  // namespace detail

inline constexpr std::size_t kDefaultGlyphAnchorRotations = 10;

// Rotations of one asymmetric glyph. Each sample is its own class (its own
// rotation manifold); anchors are evenly spaced rotations of the base image.
inline LabeledDataset gen_rotated_glyphs(
    std::size_t n, std::size_t side, Rng& rng,
    std::size_t anchors_per_sample = kDefaultGlyphAnchorRotations) {
    if (side < 8) throw config_error("glyph side must be at least 8");
    LabeledDataset ds;
    ds.kind = DatasetKind::glyphs;
    ds.glyph_side = side;
    ds.base_glyph = detail::base_glyph_image(side);

    std::vector<Vec> anchor_group;
    for (std::size_t j = 0; j < anchors_per_sample; ++j)
        anchor_group.push_back(rotate_bilinear(
            ds.base_glyph, side, 360.0 * static_cast<double>(j) / anchors_per_sample));

    for (std::size_t i = 0; i < n; ++i) {
        const double angle = rng.uniform(0.0, 350.0);
        ds.inputs.push_back(rotate_bilinear(ds.base_glyph, side, angle));
        const double rad = angle * M_PI / 180.0;
        ds.latents.push_back(Vec{std::cos(rad), std::sin(rad)});
        ds.labels.push_back(static_cast<int>(i));
        ds.sample_anchors.push_back(anchor_group);
    }
    return ds;
}

struct AnchorSet {
    std::vector<Vec> anchors;  // input space
    std::vector<int> labels;

    std::size_t size() const { return anchors.size(); }
};

// Contiguous subrange [begin, end) with shared metadata. Train/test splits are
// slices of one generated stream.
inline LabeledDataset slice_dataset(const LabeledDataset& ds, std::size_t begin,
                                    std::size_t end) {
    if (begin > end || end > ds.size())
        throw config_error("dataset slice out of range");
    LabeledDataset out;
    out.kind = ds.kind;
    out.embedding = ds.embedding;
    out.glyph_side = ds.glyph_side;
    out.base_glyph = ds.base_glyph;
    out.inputs.assign(ds.inputs.begin() + begin, ds.inputs.begin() + end);
    out.labels.assign(ds.labels.begin() + begin, ds.labels.begin() + end);
    if (!ds.latents.empty())
        out.latents.assign(ds.latents.begin() + begin, ds.latents.begin() + end);
    if (!ds.sample_anchors.empty())
        out.sample_anchors.assign(ds.sample_anchors.begin() + begin,
                                  ds.sample_anchors.begin() + end);
    return out;
}

enum class AnchorStrategy { even_ground_truth, random_per_class, per_sample_rotations };

inline AnchorStrategy anchor_strategy_from_string(const std::string& s) {
    if (s == "even_ground_truth") return AnchorStrategy::even_ground_truth;
    if (s == "random_per_class") return AnchorStrategy::random_per_class;
    if (s == "per_sample_rotations") return AnchorStrategy::per_sample_rotations;
    throw config_error("unknown anchor strategy: " + s);
}

inline const char* to_string(AnchorStrategy s) {
    switch (s) {
        case AnchorStrategy::even_ground_truth: return "even_ground_truth";
        case AnchorStrategy::random_per_class: return "random_per_class";
        default: return "per_sample_rotations";
    }
}

inline std::vector<int> distinct_labels(const LabeledDataset& ds) {
    std::vector<int> classes = ds.labels;
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    return classes;
}

inline AnchorSet select_anchors(const LabeledDataset& ds, AnchorStrategy strategy,
                                std::size_t per_class, Rng& rng) {
    if (per_class < 1) throw config_error("need at least one anchor per class");
    AnchorSet set;
    switch (strategy) {
        case AnchorStrategy::even_ground_truth: {
            if (!ds.has_ground_truth())
                throw config_error(
                    "even_ground_truth anchors need a dataset with ground-truth latents");
            if (ds.kind == DatasetKind::swiss_roll) {
                // Midpoints of equal spiral-parameter segments.
                for (std::size_t j = 0; j < per_class; ++j) {
                    const double t = kSwissRollLow +
                                     (static_cast<double>(j) + 0.5) *
                                         (kSwissRollHigh - kSwissRollLow) / per_class;
                    const double r = t / kSwissRollHigh;
                    set.anchors.push_back(detail::embed(
                        ds.embedding, Vec{r * std::cos(t), r * std::sin(t)}));
                    set.labels.push_back(0);
                }
            } else if (ds.kind == DatasetKind::circles) {
                for (int cls = 0; cls < 2; ++cls) {
                    const double r = kCircleRadii[cls];
                    for (std::size_t j = 0; j < per_class; ++j) {
                        const double angle = 2.0 * M_PI * static_cast<double>(j) / per_class;
                        set.anchors.push_back(detail::embed(
                            ds.embedding, Vec{r * std::cos(angle), r * std::sin(angle)}));
                        set.labels.push_back(cls);
                    }
                }
            } else {
                throw config_error("even_ground_truth anchors undefined for glyphs");
            }
            break;
        }
        case AnchorStrategy::random_per_class: {
            for (int cls : distinct_labels(ds)) {
                std::vector<std::size_t> members;
                for (std::size_t i = 0; i < ds.size(); ++i)
                    if (ds.labels[i] == cls) members.push_back(i);
                if (members.size() < per_class)
                    throw config_error("class has fewer members than anchors requested");
                std::vector<std::size_t> chosen;
                while (chosen.size() < per_class) {
                    const std::size_t pick = static_cast<std::size_t>(
                        rng.uniform() * static_cast<double>(members.size()));
                    const std::size_t idx = members[std::min(pick, members.size() - 1)];
                    if (std::find(chosen.begin(), chosen.end(), idx) == chosen.end())
                        chosen.push_back(idx);
                }
                for (std::size_t idx : chosen) {
                    set.anchors.push_back(ds.inputs[idx]);
                    set.labels.push_back(cls);
                }
            }
            break;
        }
        case AnchorStrategy::per_sample_rotations: {
            if (ds.kind != DatasetKind::glyphs || ds.base_glyph.size() == 0)
                throw config_error("per_sample_rotations anchors need a glyph dataset");
            for (std::size_t i = 0; i < ds.size(); ++i)
                for (std::size_t j = 0; j < per_class; ++j) {
                    set.anchors.push_back(rotate_bilinear(
                        ds.base_glyph, ds.glyph_side,
                        360.0 * static_cast<double>(j) / per_class));
                    set.labels.push_back(ds.labels[i]);
                }
            break;
        }
    }
    return set;
}

// Main file: label then D values per row. Ground-truth latents and the
// embedding go to sibling files <path minus .csv>.latents.csv / .embedding.csv.
inline void write_dataset_csv(const LabeledDataset& ds, const std::string& path) {
    const std::size_t dim = ds.data_dim();
    std::vector<std::string> header{"label"};
    for (std::size_t j = 0; j < dim; ++j) header.push_back("x" + std::to_string(j));
    CsvWriter out(path, header);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::vector<std::string> row{std::to_string(ds.labels[i])};
        for (std::size_t j = 0; j < dim; ++j) row.push_back(format_g17(ds.inputs[i][j]));
        out.write_row(row);
    }
    const std::string stem =
        path.size() > 4 && path.substr(path.size() - 4) == ".csv"
            ? path.substr(0, path.size() - 4)
            : path;
    if (!ds.latents.empty()) {
        CsvWriter lat(stem + ".latents.csv", {"l0", "l1"});
        for (const Vec& l : ds.latents) lat.write_numeric_row({l[0], l[1]});
    }
    if (ds.embedding.count() > 0) {
        CsvWriter emb(stem + ".embedding.csv", {"e0", "e1"});
        for (std::size_t i = 0; i < ds.embedding.rows(); ++i)
            emb.write_numeric_row({ds.embedding(i, 0), ds.embedding(i, 1)});
    }
}

inline LabeledDataset read_dataset_csv(const std::string& path) {
    CsvTable table = read_csv(path);
    if (table.header.empty() || table.header[0] != "label")
        throw config_error("dataset csv must start with a label column: " + path);
    LabeledDataset ds;
    const std::size_t dim = table.header.size() - 1;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        if (row.size() != dim + 1)
            throw config_error("dataset csv row " + std::to_string(i + 2) +
                               " has wrong field count in " + path);
        const std::string ctx = path + " row " + std::to_string(i + 2);
        ds.labels.push_back(static_cast<int>(parse_long(row[0], ctx)));
        Vec x(dim);
        for (std::size_t j = 0; j < dim; ++j) x[j] = parse_double(row[j + 1], ctx);
        ds.inputs.push_back(std::move(x));
    }
    const std::string stem =
        path.size() > 4 && path.substr(path.size() - 4) == ".csv"
            ? path.substr(0, path.size() - 4)
            : path;
    std::ifstream lat_probe(stem + ".latents.csv");
    if (lat_probe) {
        CsvTable lat = read_csv(stem + ".latents.csv");
        for (const auto& row : lat.rows)
            ds.latents.push_back(Vec{parse_double(row[0], "latents"),
                                     parse_double(row[1], "latents")});
    }
    std::ifstream emb_probe(stem + ".embedding.csv");
    if (emb_probe) {
        CsvTable emb = read_csv(stem + ".embedding.csv");
        ds.embedding = Mat(emb.rows.size(), 2);
        for (std::size_t i = 0; i < emb.rows.size(); ++i) {
            ds.embedding(i, 0) = parse_double(emb.rows[i][0], "embedding");
            ds.embedding(i, 1) = parse_double(emb.rows[i][1], "embedding");
        }
    }
    return ds;
}

// Least-squares latents through the embedding's orthonormal columns.
inline Vec recover_latent(const LabeledDataset& ds, const Vec& x) {
    if (ds.embedding.count() == 0)
        throw config_error("dataset has no embedding to invert");
    return matvec_t(ds.embedding, x);
}

}  // namespace vaells
