#pragma once

// Command-line surface: train / sample / orbit / path / eval / contour / diag.
// Exit codes: 0 success, 2 configuration error, 3 numeric failure. All CSV
// outputs are deterministic functions of config and seed; SVG figures are
// rendered from the already-written CSV files and never feed back into them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vaells/common.hpp"
#include "vaells/config.hpp"
#include "vaells/csv.hpp"
#include "vaells/datasets.hpp"
#include "vaells/evaluate.hpp"
#include "vaells/model.hpp"
#include "vaells/svg.hpp"
#include "vaells/transport.hpp"

namespace vaells {
namespace cli_detail {

namespace fs = std::filesystem;

inline std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

inline std::string default_out_dir(const std::string& ckpt_path) {
    const fs::path parent = fs::path(ckpt_path).parent_path();
    return parent.empty() ? std::string(".") : parent.string();
}

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw config_error("cannot create output directory " + dir + ": " + ec.message());
}

inline std::size_t column_index(const CsvTable& table, const std::string& name,
                                const std::string& path) {
    for (std::size_t i = 0; i < table.header.size(); ++i)
        if (table.header[i] == name) return i;
    throw config_error(path + " missing column '" + name + "'");
}

// Scatter figure from a CSV already on disk. Points are grouped into series by
// label when several labels are present, otherwise shaded by the given column.
inline void render_scatter_svg(const std::string& csv_path, const std::string& svg_path,
                               const std::string& x_col, const std::string& y_col,
                               const std::string& label_col, const std::string& shade_col,
                               const std::string& title) {
    const CsvTable table = read_csv(csv_path);
    const std::size_t cx = column_index(table, x_col, csv_path);
    const std::size_t cy = column_index(table, y_col, csv_path);

    std::vector<int> labels;
    if (!label_col.empty()) {
        const std::size_t cl = column_index(table, label_col, csv_path);
        for (const auto& row : table.rows)
            labels.push_back(static_cast<int>(parse_long(row.at(cl), label_col)));
    }
    std::set<int> distinct(labels.begin(), labels.end());

    std::vector<SvgSeries> series;
    if (distinct.size() > 1) {
        for (int cls : distinct) {
            SvgSeries s;
            s.color = class_color(static_cast<std::size_t>(cls));
            s.label = "class " + std::to_string(cls);
            for (std::size_t r = 0; r < table.rows.size(); ++r)
                if (labels[r] == cls)
                    s.points.emplace_back(parse_double(table.rows[r].at(cx), x_col),
                                          parse_double(table.rows[r].at(cy), y_col));
            series.push_back(std::move(s));
        }
    } else if (!shade_col.empty() && !table.rows.empty()) {
        const std::size_t cs = column_index(table, shade_col, csv_path);
        std::vector<double> shade;
        for (const auto& row : table.rows)
            shade.push_back(parse_double(row.at(cs), shade_col));
        const auto [lo_it, hi_it] = std::minmax_element(shade.begin(), shade.end());
        const double lo = *lo_it, span = std::max(*hi_it - *lo_it, 1e-300);
        const std::size_t bins = 16;
        std::vector<SvgSeries> binned(bins);
        for (std::size_t b = 0; b < bins; ++b)
            binned[b].color = gradient_color((static_cast<double>(b) + 0.5) / bins);
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            const double t = (shade[r] - lo) / span;
            const std::size_t b =
                std::min(bins - 1, static_cast<std::size_t>(t * static_cast<double>(bins)));
            binned[b].points.emplace_back(parse_double(table.rows[r].at(cx), x_col),
                                          parse_double(table.rows[r].at(cy), y_col));
        }
        for (auto& s : binned)
            if (!s.points.empty()) series.push_back(std::move(s));
    } else {
        SvgSeries s;
        for (const auto& row : table.rows)
            s.points.emplace_back(parse_double(row.at(cx), x_col),
                                  parse_double(row.at(cy), y_col));
        series.push_back(std::move(s));
    }
    write_scatter_svg(svg_path, series, title);
}

// Polyline figure from a path CSV, endpoints marked.
inline void render_path_svg(const std::string& csv_path, const std::string& svg_path,
                            const std::string& x_col, const std::string& y_col,
                            const std::string& title) {
    const CsvTable table = read_csv(csv_path);
    const std::size_t cx = column_index(table, x_col, csv_path);
    const std::size_t cy = column_index(table, y_col, csv_path);
    SvgSeries line;
    line.connect = true;
    line.radius = 1.8;
    for (const auto& row : table.rows)
        line.points.emplace_back(parse_double(row.at(cx), x_col),
                                 parse_double(row.at(cy), y_col));
    std::vector<SvgSeries> series{line};
    if (!line.points.empty()) {
        SvgSeries start, finish;
        start.color = "#3a9d5d";
        start.label = "start";
        start.radius = 5.0;
        start.points.push_back(line.points.front());
        finish.color = "#d1495b";
        finish.label = "end";
        finish.radius = 5.0;
        finish.points.push_back(line.points.back());
        series.push_back(std::move(start));
        series.push_back(std::move(finish));
    }
    write_scatter_svg(svg_path, series, title);
}

struct LoadedCheckpoint {
    Checkpoint ck;
    LabeledDataset train;
    LabeledDataset test;
};

inline LoadedCheckpoint load_for_inference(const std::string& ckpt_path) {
    LoadedCheckpoint out;
    out.ck = read_checkpoint(ckpt_path);
    const LabeledDataset full = regenerate_dataset(out.ck.data);
    out.train = slice_dataset(full, 0, out.ck.data.n_train);
    out.test = slice_dataset(full, out.ck.data.n_train,
                             out.ck.data.n_train + out.ck.data.n_test);
    return out;
}

inline std::vector<std::string> latent_header(std::size_t d) {
    std::vector<std::string> names;
    for (std::size_t k = 0; k < d; ++k) names.push_back("z" + std::to_string(k));
    return names;
}

struct TrainArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<uint64_t> seed_override;
};

inline int run_train(const TrainArgs& args) {
    RunConfig cfg = load_config(args.config_path);
    if (args.seed_override) cfg.seed = *args.seed_override;
    validate_config(cfg);
    ensure_dir(args.out_dir);

    const DatasetInfo info{cfg.dataset, cfg.data_seed, cfg.n_train, cfg.n_test,
                           cfg.dataset == DatasetKind::glyphs ? cfg.glyph_side : 0};
    const LabeledDataset full = regenerate_dataset(info);
    const LabeledDataset train_ds = slice_dataset(full, 0, cfg.n_train);

    Rng anchor_rng = Rng(cfg.seed).fork(0xA17C);
    const AnchorSet anchors =
        select_anchors(train_ds, cfg.anchor_strategy, cfg.hp.anchors_per_class, anchor_rng);

    std::cerr << "training " << to_string(cfg.dataset) << ": " << cfg.hp.train_steps
              << " steps, seed " << cfg.seed << "\n";
    TrainingLog log;
    const ModelState model = train(train_ds, cfg.hp, anchors, cfg.seed, log);

    const std::string ckpt_path = join(args.out_dir, "model.ckpt");
    write_checkpoint(ckpt_path, model, cfg.hp, info);
    write_training_log_csv(log, cfg.hp.num_operators, join(args.out_dir, "trainlog.csv"),
                           join(args.out_dir, "timing.csv"));
    write_config(cfg, join(args.out_dir, "config_used.cfg"));

    // Encoded training set, with ground-truth coordinates when the dataset has
    // them so the figure can be colored by the generating parameter.
    const bool gt = train_ds.has_ground_truth();
    std::vector<std::string> header = {"row", "label"};
    if (gt) {
        header.push_back("gt0");
        header.push_back("gt1");
    }
    for (const auto& n : latent_header(cfg.hp.latent_dim)) header.push_back(n);
    const std::string latents_csv = join(args.out_dir, "latents.csv");
    {
        CsvWriter w(latents_csv, header);
        for (std::size_t i = 0; i < train_ds.size(); ++i) {
            std::vector<std::string> fields = {std::to_string(i),
                                               std::to_string(train_ds.labels[i])};
            if (gt) {
                fields.push_back(format_g17(train_ds.latents[i][0]));
                fields.push_back(format_g17(train_ds.latents[i][1]));
            }
            const Vec z = encode(model, train_ds.inputs[i]);
            for (double v : z) fields.push_back(format_g17(v));
            w.write_row(fields);
        }
    }
    if (cfg.hp.latent_dim >= 2)
        render_scatter_svg(latents_csv, join(args.out_dir, "latents.svg"), "z0", "z1",
                           "label", gt ? "gt0" : "", "encoded training set");

    const DiagnosticsSummary diag = training_diagnostics(log);
    std::cout << "final objective " << format_g17(log.rows.back().terms.value) << "\n"
              << "psi rejected fraction " << format_g17(diag.rejected_fraction) << "\n"
              << "outputs in " << args.out_dir << "\n";
    return 0;
}

struct SampleArgs {
    std::string ckpt_path;
    std::string mode;
    std::size_t n = 10;
    double b_vis = std::numeric_limits<double>::quiet_NaN();
    double gamma_vis = std::numeric_limits<double>::quiet_NaN();
    std::optional<int> class_label;
    uint64_t seed = 1;
    std::string out_dir;
};

inline int run_sample(const SampleArgs& args) {
    if (args.mode != "posterior" && args.mode != "prior")
        throw config_error("sample mode must be posterior or prior, got '" + args.mode +
                           "'");
    LoadedCheckpoint lc = load_for_inference(args.ckpt_path);
    const Hyperparameters& hp = lc.ck.hp;
    const std::string out_dir =
        args.out_dir.empty() ? default_out_dir(args.ckpt_path) : args.out_dir;
    ensure_dir(out_dir);
    const std::string csv_path = join(out_dir, "samples.csv");
    Rng rng(args.seed);

    std::vector<std::string> header;
    if (args.mode == "posterior") {
        if (args.n == 0) throw config_error("sample: n must be positive");
        if (args.n > lc.train.size())
            throw config_error("sample: n exceeds training set size " +
                               std::to_string(lc.train.size()));
        header = {"row", "label"};
        for (const auto& nm : latent_header(hp.latent_dim)) header.push_back(nm);
        for (std::size_t k = 0; k < hp.data_dim; ++k)
            header.push_back("x" + std::to_string(k));
        CsvWriter w(csv_path, header);
        for (std::size_t i = 0; i < args.n; ++i) {
            const PosteriorSample s =
                sample_posterior(lc.ck.model, lc.train.inputs[i], hp, rng);
            std::vector<std::string> fields = {std::to_string(i),
                                               std::to_string(lc.train.labels[i])};
            for (double v : s.z) fields.push_back(format_g17(v));
            const Vec x = decode(lc.ck.model, s.z);
            for (double v : x) fields.push_back(format_g17(v));
            w.write_row(fields);
        }
    } else {
        const double b_vis = std::isnan(args.b_vis) ? hp.laplace_scale : args.b_vis;
        const double gamma_vis = std::isnan(args.gamma_vis) ? hp.gamma_post : args.gamma_vis;
        std::vector<int> classes;
        if (args.class_label) {
            classes.push_back(*args.class_label);
        } else {
            std::set<int> distinct(lc.ck.model.anchors.labels.begin(),
                                   lc.ck.model.anchors.labels.end());
            classes.assign(distinct.begin(), distinct.end());
        }
        header = {"class", "anchor_index"};
        for (const auto& nm : latent_header(hp.latent_dim)) header.push_back(nm);
        for (std::size_t k = 0; k < hp.data_dim; ++k)
            header.push_back("x" + std::to_string(k));
        CsvWriter w(csv_path, header);
        for (int cls : classes) {
            const auto draws =
                prior_samples(lc.ck.model, cls, args.n, b_vis, gamma_vis, hp, rng);
            for (const auto& s : draws) {
                std::vector<std::string> fields = {std::to_string(cls),
                                                   std::to_string(s.anchor_index)};
                for (double v : s.z) fields.push_back(format_g17(v));
                const Vec x = decode(lc.ck.model, s.z);
                for (double v : x) fields.push_back(format_g17(v));
                w.write_row(fields);
            }
        }
    }
    if (hp.latent_dim >= 2)
        render_scatter_svg(csv_path, join(out_dir, "samples.svg"), "z0", "z1",
                           args.mode == "posterior" ? "label" : "class", "",
                           args.mode + " samples");
    std::cout << "wrote " << csv_path << "\n";
    return 0;
}

struct OrbitArgs {
    std::string ckpt_path;
    std::size_t op = 0;
    long steps = 50;
    std::string from;
    double time_scale = 1.0;
    std::string out_dir;
};

// Starting point spec: anchor:<i> or encode:<train row>.
inline Vec resolve_start(const LoadedCheckpoint& lc, const std::string& from) {
    const auto colon = from.find(':');
    if (colon == std::string::npos)
        throw config_error("--from expects anchor:<i> or encode:<row>, got '" + from +
                           "'");
    const std::string kind = from.substr(0, colon);
    const long index = parse_long(from.substr(colon + 1), "--from index");
    if (index < 0) throw config_error("--from index must be non-negative");
    const std::size_t i = static_cast<std::size_t>(index);
    if (kind == "anchor") {
        if (i >= lc.ck.model.anchors.size())
            throw config_error("--from anchor index " + std::to_string(i) +
                               " out of range (have " +
                               std::to_string(lc.ck.model.anchors.size()) + ")");
        return encode(lc.ck.model, lc.ck.model.anchors.anchors[i]);
    }
    if (kind == "encode") {
        if (i >= lc.train.size())
            throw config_error("--from train row " + std::to_string(i) +
                               " out of range (have " + std::to_string(lc.train.size()) +
                               ")");
        return encode(lc.ck.model, lc.train.inputs[i]);
    }
    throw config_error("--from expects anchor:<i> or encode:<row>, got '" + from + "'");
}

inline void write_latent_path_csv(const std::string& path, const std::vector<Vec>& points) {
    std::vector<std::string> header = {"step"};
    for (const auto& nm : latent_header(points.front().size())) header.push_back(nm);
    CsvWriter w(path, header);
    for (std::size_t t = 0; t < points.size(); ++t) {
        std::vector<std::string> fields = {std::to_string(t)};
        for (double v : points[t]) fields.push_back(format_g17(v));
        w.write_row(fields);
    }
}

inline int run_orbit(const OrbitArgs& args) {
    if (args.steps < 0) throw config_error("orbit: steps must be non-negative");
    LoadedCheckpoint lc = load_for_inference(args.ckpt_path);
    const Hyperparameters& hp = lc.ck.hp;
    const std::string out_dir =
        args.out_dir.empty() ? default_out_dir(args.ckpt_path) : args.out_dir;
    ensure_dir(out_dir);

    const Vec z0 = resolve_start(lc, args.from);
    std::vector<Vec> points;
    if (args.steps == 0) {
        points.push_back(z0);
    } else {
        const double s = hp.latent_scale;
        points = orbit(lc.ck.model.dictionary, args.op, s * z0,
                       static_cast<int>(args.steps), args.time_scale);
        for (Vec& p : points) p *= 1.0 / s;
    }
    const std::string csv_path = join(out_dir, "orbit.csv");
    write_latent_path_csv(csv_path, points);
    if (hp.latent_dim >= 2)
        render_path_svg(csv_path, join(out_dir, "orbit.svg"), "z0", "z1",
                        "operator " + std::to_string(args.op) + " orbit");
    std::cout << "wrote " << csv_path << " (" << points.size() << " points)\n";
    return 0;
}

struct PathArgs {
    std::string ckpt_path;
    long from_row = 0;
    long to_row = 0;
    long steps = 50;
    uint64_t seed = 1;
    std::string out_dir;
};

inline int run_path(const PathArgs& args) {
    if (args.steps < 1) throw config_error("path: steps must be positive");
    if (args.from_row < 0 || args.to_row < 0)
        throw config_error("path: row indices must be non-negative");
    LoadedCheckpoint lc = load_for_inference(args.ckpt_path);
    const Hyperparameters& hp = lc.ck.hp;
    const std::size_t from_i = static_cast<std::size_t>(args.from_row);
    const std::size_t to_i = static_cast<std::size_t>(args.to_row);
    if (from_i >= lc.train.size() || to_i >= lc.train.size())
        throw config_error("path: train rows out of range (have " +
                           std::to_string(lc.train.size()) + ")");
    const std::string out_dir =
        args.out_dir.empty() ? default_out_dir(args.ckpt_path) : args.out_dir;
    ensure_dir(out_dir);

    const double s = hp.latent_scale;
    const Vec z0 = s * encode(lc.ck.model, lc.train.inputs[from_i]);
    const Vec z1 = s * encode(lc.ck.model, lc.train.inputs[to_i]);
    Rng rng(args.seed);
    const auto res = infer_coefficients(
        lc.ck.model.dictionary, z1, z0,
        detail::inference_settings(hp, hp.zeta_p, hp.zeta2), rng);

    std::vector<Vec> points =
        interpolate_path(lc.ck.model.dictionary, res.coeffs, z0,
                         static_cast<int>(args.steps));
    for (Vec& p : points) p *= 1.0 / s;

    const std::string csv_path = join(out_dir, "path.csv");
    write_latent_path_csv(csv_path, points);
    {
        CsvWriter w(join(out_dir, "path_coeffs.csv"), {"operator", "coefficient"});
        for (std::size_t m = 0; m < res.coeffs.size(); ++m)
            w.write_row({std::to_string(m), format_g17(res.coeffs[m])});
    }
    if (hp.latent_dim >= 2)
        render_path_svg(csv_path, join(out_dir, "path.svg"), "z0", "z1",
                        "transport path " + std::to_string(from_i) + " to " +
                            std::to_string(to_i));
    std::cout << "c_star =";
    for (double c : res.coeffs) std::cout << " " << format_g17(c);
    std::cout << "\nwrote " << csv_path << "\n";
    return 0;
}

struct EvalArgs {
    std::string ckpt_path;
    std::optional<std::size_t> points;
    std::size_t samples = 100;
    uint64_t seed = 1;
    std::string out_dir;
};

inline int run_eval(const EvalArgs& args) {
    LoadedCheckpoint lc = load_for_inference(args.ckpt_path);
    const Hyperparameters& hp = lc.ck.hp;
    const std::string out_dir =
        args.out_dir.empty() ? default_out_dir(args.ckpt_path) : args.out_dir;
    ensure_dir(out_dir);
    if (lc.test.size() == 0) throw config_error("eval: checkpoint has no test split");
    // Default point count follows the estimator's convention, capped by the
    // available test split; an explicit request larger than the split errors.
    const std::size_t num_points =
        args.points ? *args.points : std::min<std::size_t>(500, lc.test.size());

    Rng rng(args.seed);
    const double ll =
        estimated_log_likelihood(lc.ck.model, lc.test, hp, num_points, args.samples, rng);
    const double train_mse = reconstruction_mse(lc.ck.model, lc.train);
    const double test_mse = reconstruction_mse(lc.ck.model, lc.test);

    write_metrics_csv({{"log_likelihood", ll},
                       {"num_points", static_cast<double>(num_points)},
                       {"num_samples", static_cast<double>(args.samples)},
                       {"train_mse", train_mse},
                       {"test_mse", test_mse}},
                      join(out_dir, "eval.csv"));
    std::cout << "metric           value\n"
              << "log_likelihood   " << format_g17(ll) << "\n"
              << "train_mse        " << format_g17(train_mse) << "\n"
              << "test_mse         " << format_g17(test_mse) << "\n"
              << "(" << num_points << " points, " << args.samples << " samples)\n";
    return 0;
}

struct ContourArgs {
    std::string ckpt_path;
    long input_row = 0;
    std::size_t res = 32;
    double margin = 0.2;
    uint64_t seed = 1;
    std::string out_dir;
};

inline int run_contour(const ContourArgs& args) {
    LoadedCheckpoint lc = load_for_inference(args.ckpt_path);
    const Hyperparameters& hp = lc.ck.hp;
    if (args.input_row < 0 ||
        static_cast<std::size_t>(args.input_row) >= lc.train.size())
        throw config_error("contour: input row out of range (have " +
                           std::to_string(lc.train.size()) + ")");
    const std::string out_dir =
        args.out_dir.empty() ? default_out_dir(args.ckpt_path) : args.out_dir;
    ensure_dir(out_dir);

    // Grid bounds: bounding box of the encoded training set plus a margin.
    GridSpec spec;
    spec.resolution1 = spec.resolution2 = args.res;
    bool first = true;
    for (const Vec& x : lc.train.inputs) {
        const Vec z = encode(lc.ck.model, x);
        if (first) {
            spec.z1_min = spec.z1_max = z[0];
            spec.z2_min = spec.z2_max = z[1];
            first = false;
        }
        spec.z1_min = std::min(spec.z1_min, z[0]);
        spec.z1_max = std::max(spec.z1_max, z[0]);
        spec.z2_min = std::min(spec.z2_min, z[1]);
        spec.z2_max = std::max(spec.z2_max, z[1]);
    }
    const double pad1 = std::max(args.margin * (spec.z1_max - spec.z1_min), 1e-6);
    const double pad2 = std::max(args.margin * (spec.z2_max - spec.z2_min), 1e-6);
    spec.z1_min -= pad1;
    spec.z1_max += pad1;
    spec.z2_min -= pad2;
    spec.z2_max += pad2;

    Rng rng(args.seed);
    const ContourGrid grid = posterior_contour(
        lc.ck.model, lc.train.inputs[static_cast<std::size_t>(args.input_row)], spec, hp,
        rng);
    const std::string csv_path = join(out_dir, "contour.csv");
    write_contour_csv(grid, csv_path);

    std::size_t best = 0;
    for (std::size_t c = 1; c < grid.total.size(); ++c)
        if (grid.total[c] > grid.total[best]) best = c;
    const std::size_t bi = best / grid.spec.resolution2;
    const std::size_t bj = best % grid.spec.resolution2;
    std::cout << "wrote " << csv_path << "\n"
              << "max total " << format_g17(grid.total[best]) << " at z = ("
              << format_g17(grid.z1_at(bi)) << ", " << format_g17(grid.z2_at(bj))
              << ")\n";
    return 0;
}

struct DiagArgs {
    std::string log_path;
    std::string timing_path;
};

inline int run_diag(const DiagArgs& args) {
    std::string timing = args.timing_path;
    if (timing.empty()) {
        const fs::path sibling = fs::path(args.log_path).parent_path() / "timing.csv";
        std::error_code ec;
        if (fs::exists(sibling, ec)) timing = sibling.string();
    }
    const TrainingLog log = read_training_log_csv(args.log_path, timing);
    const DiagnosticsSummary d = training_diagnostics(log);
    std::cout << "rows                   " << log.rows.size() << "\n"
              << "psi_steps              " << d.psi_steps << "\n"
              << "psi_rejected           " << d.psi_rejected << "\n"
              << "rejected_fraction      " << format_g17(d.rejected_fraction) << "\n"
              << "mean_infer_iterations  " << format_g17(d.mean_infer_iterations) << "\n"
              << "p95_infer_iterations   " << format_g17(d.p95_infer_iterations) << "\n"
              << "mean_step_seconds      " << format_g17(d.mean_step_seconds) << "\n"
              << "p95_step_seconds       " << format_g17(d.p95_step_seconds) << "\n";
    std::cout << "final_psi_fro         ";
    for (double f : d.final_psi_fro) std::cout << " " << format_g17(f);
    std::cout << "\nsuspect                " << (d.suspect ? "yes" : "no") << "\n";
    return 0;
}

}  // namespace cli_detail

inline int cli_main(int argc, char** argv) {
    using namespace cli_detail;
    CLI::App app{"transport-operator variational autoencoder"};
    app.require_subcommand(1);

    TrainArgs train_args;
    uint64_t seed_value = 0;
    auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
    train_cmd->add_option("--config", train_args.config_path, "run configuration file")
        ->required();
    train_cmd->add_option("--out", train_args.out_dir, "output directory")->required();
    auto* seed_opt =
        train_cmd->add_option("--seed", seed_value, "override the config's seed");

    SampleArgs sample_args;
    int sample_class = 0;
    auto* sample_cmd = app.add_subcommand("sample", "draw posterior or prior samples");
    sample_cmd->add_option("--ckpt", sample_args.ckpt_path, "checkpoint file")->required();
    sample_cmd->add_option("--mode", sample_args.mode, "posterior or prior")->required();
    sample_cmd->add_option("--n", sample_args.n, "samples per class (prior) or points (posterior)");
    sample_cmd->add_option("--b-vis", sample_args.b_vis, "visualization Laplace scale");
    sample_cmd->add_option("--gamma-vis", sample_args.gamma_vis, "visualization noise scale");
    auto* class_opt = sample_cmd->add_option("--class", sample_class, "restrict prior samples to one class");
    sample_cmd->add_option("--seed", sample_args.seed, "sampling seed");
    sample_cmd->add_option("--out", sample_args.out_dir, "output directory");

    OrbitArgs orbit_args;
    auto* orbit_cmd = app.add_subcommand("orbit", "trace a single-operator orbit");
    orbit_cmd->add_option("--ckpt", orbit_args.ckpt_path, "checkpoint file")->required();
    orbit_cmd->add_option("--op", orbit_args.op, "operator index");
    orbit_cmd->add_option("--steps", orbit_args.steps, "number of steps");
    orbit_cmd->add_option("--from", orbit_args.from, "anchor:<i> or encode:<row>")
        ->required();
    orbit_cmd->add_option("--time-scale", orbit_args.time_scale, "orbit extent");
    orbit_cmd->add_option("--out", orbit_args.out_dir, "output directory");

    PathArgs path_args;
    auto* path_cmd = app.add_subcommand("path", "transport path between two points");
    path_cmd->add_option("--ckpt", path_args.ckpt_path, "checkpoint file")->required();
    path_cmd->add_option("--from", path_args.from_row, "train row of the start point")
        ->required();
    path_cmd->add_option("--to", path_args.to_row, "train row of the end point")
        ->required();
    path_cmd->add_option("--steps", path_args.steps, "number of steps");
    path_cmd->add_option("--seed", path_args.seed, "inference restart seed");
    path_cmd->add_option("--out", path_args.out_dir, "output directory");

    EvalArgs eval_args;
    std::size_t eval_points = 0;
    auto* eval_cmd = app.add_subcommand("eval", "estimated log-likelihood and MSE");
    eval_cmd->add_option("--ckpt", eval_args.ckpt_path, "checkpoint file")->required();
    auto* points_opt = eval_cmd->add_option("--points", eval_points, "test points to score");
    eval_cmd->add_option("--samples", eval_args.samples, "importance samples per point");
    eval_cmd->add_option("--seed", eval_args.seed, "evaluation seed");
    eval_cmd->add_option("--out", eval_args.out_dir, "output directory");

    ContourArgs contour_args;
    auto* contour_cmd = app.add_subcommand("contour", "posterior density grid around an input");
    contour_cmd->add_option("--ckpt", contour_args.ckpt_path, "checkpoint file")->required();
    contour_cmd->add_option("--input", contour_args.input_row, "train row of the input")
        ->required();
    contour_cmd->add_option("--res", contour_args.res, "grid resolution per axis");
    contour_cmd->add_option("--margin", contour_args.margin, "bounding box margin fraction");
    contour_cmd->add_option("--seed", contour_args.seed, "inference restart seed");
    contour_cmd->add_option("--out", contour_args.out_dir, "output directory");

    DiagArgs diag_args;
    auto* diag_cmd = app.add_subcommand("diag", "summarize a training log");
    diag_cmd->add_option("--log", diag_args.log_path, "trainlog.csv path")->required();
    diag_cmd->add_option("--timing", diag_args.timing_path, "timing.csv path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train_cmd->parsed()) {
            if (seed_opt->count() > 0) train_args.seed_override = seed_value;
            return run_train(train_args);
        }
        if (sample_cmd->parsed()) {
            if (class_opt->count() > 0) sample_args.class_label = sample_class;
            return run_sample(sample_args);
        }
        if (orbit_cmd->parsed()) return run_orbit(orbit_args);
        if (path_cmd->parsed()) return run_path(path_args);
        if (eval_cmd->parsed()) {
            if (points_opt->count() > 0) eval_args.points = eval_points;
            return run_eval(eval_args);
        }
        if (contour_cmd->parsed()) return run_contour(contour_args);
        if (diag_cmd->parsed()) return run_diag(diag_args);
        std::cerr << "no subcommand selected\n";
        return 2;
    } catch (const config_error& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const dim_error& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace vaells
