#pragma once

// Run configuration: a line-oriented key = value file selecting the dataset,
// anchor placement, seeds, and every model hyperparameter. Unknown keys are
// rejected so a typo cannot silently fall back to a default.

#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "vaells/common.hpp"
#include "vaells/csv.hpp"
#include "vaells/datasets.hpp"
#include "vaells/model.hpp"

namespace vaells {

struct RunConfig {
    DatasetKind dataset = DatasetKind::swiss_roll;
    uint64_t data_seed = 1;
    uint64_t seed = 1;
    std::size_t n_train = 1000;
    std::size_t n_test = 200;
    std::size_t glyph_side = 16;
    AnchorStrategy anchor_strategy = AnchorStrategy::even_ground_truth;
    Hyperparameters hp;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline bool parse_bool(const std::string& value, const std::string& key) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw config_error("key '" + key + "' expects true/false, got '" + value + "'");
}

inline std::size_t parse_size(const std::string& value, const std::string& key) {
    const long v = parse_long(value, key);
    if (v < 0) throw config_error("key '" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
}

}  // namespace detail

// Applies one key = value assignment to the config. Throws config_error for
// unknown keys or malformed values.
inline void apply_config_entry(RunConfig& cfg, const std::string& key,
                               const std::string& value) {
    using Setter = std::function<void(RunConfig&, const std::string&)>;
    static const std::map<std::string, Setter> setters = {
        {"dataset",
         [](RunConfig& c, const std::string& v) { c.dataset = dataset_kind_from_string(v); }},
        {"data_seed",
         [](RunConfig& c, const std::string& v) {
             c.data_seed = static_cast<uint64_t>(parse_long(v, "data_seed"));
         }},
        {"seed",
         [](RunConfig& c, const std::string& v) {
             c.seed = static_cast<uint64_t>(parse_long(v, "seed"));
         }},
        {"n_train",
         [](RunConfig& c, const std::string& v) { c.n_train = detail::parse_size(v, "n_train"); }},
        {"n_test",
         [](RunConfig& c, const std::string& v) { c.n_test = detail::parse_size(v, "n_test"); }},
        {"glyph_side",
         [](RunConfig& c, const std::string& v) { c.glyph_side = detail::parse_size(v, "glyph_side"); }},
        {"anchor_strategy",
         [](RunConfig& c, const std::string& v) { c.anchor_strategy = anchor_strategy_from_string(v); }},
        {"latent_dim",
         [](RunConfig& c, const std::string& v) { c.hp.latent_dim = detail::parse_size(v, "latent_dim"); }},
        {"data_dim",
         [](RunConfig& c, const std::string& v) { c.hp.data_dim = detail::parse_size(v, "data_dim"); }},
        {"num_operators",
         [](RunConfig& c, const std::string& v) { c.hp.num_operators = detail::parse_size(v, "num_operators"); }},
        {"anchors_per_class",
         [](RunConfig& c, const std::string& v) { c.hp.anchors_per_class = detail::parse_size(v, "anchors_per_class"); }},
        {"samples_per_point",
         [](RunConfig& c, const std::string& v) { c.hp.samples_per_point = detail::parse_size(v, "samples_per_point"); }},
        {"hidden_width",
         [](RunConfig& c, const std::string& v) { c.hp.hidden_width = detail::parse_size(v, "hidden_width"); }},
        {"sigmoid_output",
         [](RunConfig& c, const std::string& v) { c.hp.sigmoid_output = detail::parse_bool(v, "sigmoid_output"); }},
        {"zeta1", [](RunConfig& c, const std::string& v) { c.hp.zeta1 = parse_double(v, "zeta1"); }},
        {"zeta2", [](RunConfig& c, const std::string& v) { c.hp.zeta2 = parse_double(v, "zeta2"); }},
        {"zeta3", [](RunConfig& c, const std::string& v) { c.hp.zeta3 = parse_double(v, "zeta3"); }},
        {"zeta4", [](RunConfig& c, const std::string& v) { c.hp.zeta4 = parse_double(v, "zeta4"); }},
        {"zeta5", [](RunConfig& c, const std::string& v) { c.hp.zeta5 = parse_double(v, "zeta5"); }},
        {"zeta_q", [](RunConfig& c, const std::string& v) { c.hp.zeta_q = parse_double(v, "zeta_q"); }},
        {"zeta_p", [](RunConfig& c, const std::string& v) { c.hp.zeta_p = parse_double(v, "zeta_p"); }},
        {"eta", [](RunConfig& c, const std::string& v) { c.hp.eta = parse_double(v, "eta"); }},
        {"gamma_post",
         [](RunConfig& c, const std::string& v) { c.hp.gamma_post = parse_double(v, "gamma_post"); }},
        {"laplace_scale",
         [](RunConfig& c, const std::string& v) { c.hp.laplace_scale = parse_double(v, "laplace_scale"); }},
        {"lr_net", [](RunConfig& c, const std::string& v) { c.hp.lr_net = parse_double(v, "lr_net"); }},
        {"lr_anchor",
         [](RunConfig& c, const std::string& v) { c.hp.lr_anchor = parse_double(v, "lr_anchor"); }},
        {"lr_psi_start",
         [](RunConfig& c, const std::string& v) { c.hp.lr_psi_start = parse_double(v, "lr_psi_start"); }},
        {"lr_psi_max",
         [](RunConfig& c, const std::string& v) { c.hp.lr_psi_max = parse_double(v, "lr_psi_max"); }},
        {"lr_decay",
         [](RunConfig& c, const std::string& v) { c.hp.lr_decay = parse_double(v, "lr_decay"); }},
        {"batch_size",
         [](RunConfig& c, const std::string& v) { c.hp.batch_size = detail::parse_size(v, "batch_size"); }},
        {"train_steps",
         [](RunConfig& c, const std::string& v) { c.hp.train_steps = parse_long(v, "train_steps"); }},
        {"warmup_steps",
         [](RunConfig& c, const std::string& v) { c.hp.warmup_steps = parse_long(v, "warmup_steps"); }},
        {"net_update_steps",
         [](RunConfig& c, const std::string& v) { c.hp.net_update_steps = parse_long(v, "net_update_steps"); }},
        {"psi_update_steps",
         [](RunConfig& c, const std::string& v) { c.hp.psi_update_steps = parse_long(v, "psi_update_steps"); }},
        {"prior_weight_during_net_steps",
         [](RunConfig& c, const std::string& v) {
             c.hp.prior_weight_during_net_steps = parse_double(v, "prior_weight_during_net_steps");
         }},
        {"recon_weight_during_psi_steps",
         [](RunConfig& c, const std::string& v) {
             c.hp.recon_weight_during_psi_steps = parse_double(v, "recon_weight_during_psi_steps");
         }},
        {"latent_scale",
         [](RunConfig& c, const std::string& v) { c.hp.latent_scale = parse_double(v, "latent_scale"); }},
        {"closest_anchor_only",
         [](RunConfig& c, const std::string& v) { c.hp.closest_anchor_only = detail::parse_bool(v, "closest_anchor_only"); }},
        {"num_restarts",
         [](RunConfig& c, const std::string& v) {
             c.hp.num_restarts = static_cast<int>(parse_long(v, "num_restarts"));
         }},
        {"infer_max_iterations",
         [](RunConfig& c, const std::string& v) {
             c.hp.infer_max_iterations = static_cast<int>(parse_long(v, "infer_max_iterations"));
         }},
        {"infer_tolerance",
         [](RunConfig& c, const std::string& v) { c.hp.infer_tolerance = parse_double(v, "infer_tolerance"); }},
        {"infer_init_low",
         [](RunConfig& c, const std::string& v) { c.hp.infer_init_low = parse_double(v, "infer_init_low"); }},
        {"infer_init_high",
         [](RunConfig& c, const std::string& v) { c.hp.infer_init_high = parse_double(v, "infer_init_high"); }},
        {"psi_init_scale",
         [](RunConfig& c, const std::string& v) { c.hp.psi_init_scale = parse_double(v, "psi_init_scale"); }},
    };
    const auto it = setters.find(key);
    if (it == setters.end()) throw config_error("unknown config key '" + key + "'");
    it->second(cfg, value);
}

inline RunConfig parse_config(std::istream& in, const std::string& origin) {
    RunConfig cfg;
    std::set<std::string> seen;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string body = detail::trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw config_error(origin + ":" + std::to_string(lineno) +
                               ": expected 'key = value', got '" + body + "'");
        const std::string key = detail::trim(body.substr(0, eq));
        const std::string value = detail::trim(body.substr(eq + 1));
        if (key.empty())
            throw config_error(origin + ":" + std::to_string(lineno) + ": empty key");
        if (!seen.insert(key).second)
            throw config_error(origin + ":" + std::to_string(lineno) +
                               ": duplicate key '" + key + "'");
        try {
            apply_config_entry(cfg, key, value);
        } catch (const config_error& e) {
            throw config_error(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    return parse_config(in, path);
}

// Serializes every key in a fixed order; the output parses back to an
// identical config.
inline void write_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open config for writing: " + path);
    const Hyperparameters& hp = cfg.hp;
    out << "dataset = " << to_string(cfg.dataset) << "\n"
        << "data_seed = " << cfg.data_seed << "\n"
        << "seed = " << cfg.seed << "\n"
        << "n_train = " << cfg.n_train << "\n"
        << "n_test = " << cfg.n_test << "\n"
        << "glyph_side = " << cfg.glyph_side << "\n"
        << "anchor_strategy = " << to_string(cfg.anchor_strategy) << "\n"
        << "latent_dim = " << hp.latent_dim << "\n"
        << "data_dim = " << hp.data_dim << "\n"
        << "num_operators = " << hp.num_operators << "\n"
        << "anchors_per_class = " << hp.anchors_per_class << "\n"
        << "samples_per_point = " << hp.samples_per_point << "\n"
        << "hidden_width = " << hp.hidden_width << "\n"
        << "sigmoid_output = " << (hp.sigmoid_output ? "true" : "false") << "\n"
        << "zeta1 = " << format_g17(hp.zeta1) << "\n"
        << "zeta2 = " << format_g17(hp.zeta2) << "\n"
        << "zeta3 = " << format_g17(hp.zeta3) << "\n"
        << "zeta4 = " << format_g17(hp.zeta4) << "\n"
        << "zeta5 = " << format_g17(hp.zeta5) << "\n"
        << "zeta_q = " << format_g17(hp.zeta_q) << "\n"
        << "zeta_p = " << format_g17(hp.zeta_p) << "\n"
        << "eta = " << format_g17(hp.eta) << "\n"
        << "gamma_post = " << format_g17(hp.gamma_post) << "\n"
        << "laplace_scale = " << format_g17(hp.laplace_scale) << "\n"
        << "lr_net = " << format_g17(hp.lr_net) << "\n"
        << "lr_anchor = " << format_g17(hp.lr_anchor) << "\n"
        << "lr_psi_start = " << format_g17(hp.lr_psi_start) << "\n"
        << "lr_psi_max = " << format_g17(hp.lr_psi_max) << "\n"
        << "lr_decay = " << format_g17(hp.lr_decay) << "\n"
        << "batch_size = " << hp.batch_size << "\n"
        << "train_steps = " << hp.train_steps << "\n"
        << "warmup_steps = " << hp.warmup_steps << "\n"
        << "net_update_steps = " << hp.net_update_steps << "\n"
        << "psi_update_steps = " << hp.psi_update_steps << "\n"
        << "prior_weight_during_net_steps = " << format_g17(hp.prior_weight_during_net_steps)
        << "\n"
        << "recon_weight_during_psi_steps = " << format_g17(hp.recon_weight_during_psi_steps)
        << "\n"
        << "latent_scale = " << format_g17(hp.latent_scale) << "\n"
        << "closest_anchor_only = " << (hp.closest_anchor_only ? "true" : "false")
        << "\n"
        << "num_restarts = " << hp.num_restarts << "\n"
        << "infer_max_iterations = " << hp.infer_max_iterations << "\n"
        << "infer_tolerance = " << format_g17(hp.infer_tolerance) << "\n"
        << "infer_init_low = " << format_g17(hp.infer_init_low) << "\n"
        << "infer_init_high = " << format_g17(hp.infer_init_high) << "\n"
        << "psi_init_scale = " << format_g17(hp.psi_init_scale) << "\n";
    if (!out) throw config_error("failed writing config: " + path);
}

// Cross-field checks that the per-key parsers cannot see.
inline void validate_config(const RunConfig& cfg) {
    validate(cfg.hp);
    const std::size_t expected_dim = cfg.dataset == DatasetKind::glyphs
                                         ? cfg.glyph_side * cfg.glyph_side
                                         : kEmbeddedDataDim;
    if (cfg.hp.data_dim != expected_dim)
        throw config_error("data_dim " + std::to_string(cfg.hp.data_dim) +
                           " does not match dataset " + to_string(cfg.dataset) +
                           " (expected " + std::to_string(expected_dim) + ")");
    if (cfg.n_train == 0) throw config_error("n_train must be positive");
    if (cfg.hp.batch_size > cfg.n_train)
        throw config_error("batch_size exceeds n_train");
}

}  // namespace vaells
