// pscox: propensity-score-weighted Cox regression front end.
//
//   pscox analyze  data.csv --estimand ate,att --subgroup "age>=70"
//   pscox simulate --scenario 2 --estimand att --n 1000 --reps 1000
//   pscox true-hr  --scenario 1 --estimand ato --samples 5000000
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <CLI11.hpp>

#include "pscox/pscox.hpp"

namespace {

void write_output(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::fwrite(text.data(), 1, text.size(), stdout);
        return;
    }
    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw pscox::DataError("cannot open output file: " + out_path);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    f.flush();
    if (!f) throw pscox::DataError("write failed: " + out_path);
}

std::string trimmed(const std::string& s) {
    auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

std::vector<pscox::WeightScheme> parse_estimand_list(const std::string& csv) {
    std::vector<pscox::WeightScheme> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = csv.find(',', start);
        const std::string tok =
            trimmed(comma == std::string::npos ? csv.substr(start) : csv.substr(start, comma - start));
        if (!tok.empty()) out.push_back(pscox::WeightScheme::from_token(tok));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (out.empty()) throw pscox::ConfigInvalid("no estimand selected");
    return out;
}

// ---- config files ----------------------------------------------------------
// Flat key=value files, '#' comments, one option per line. Values apply only
// to options the command line left untouched, so the command line always wins.

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw pscox::DataError("cannot read config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trimmed(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string key = eq == std::string::npos ? "" : trimmed(line.substr(0, eq));
        if (key.empty())
            throw pscox::ConfigInvalid("config line " + std::to_string(lineno) +
                                       " is not key=value: '" + line + "'");
        kv[key] = trimmed(line.substr(eq + 1));  // repeated keys: last one wins
    }
    return kv;
}

template <typename T>
T parse_config_number(const std::string& key, const std::string& text) {
    try {
        std::size_t pos = 0;
        if constexpr (std::is_same_v<T, double>) {
            const double v = std::stod(text, &pos);
            if (pos != text.size()) throw std::invalid_argument(text);
            return v;
        } else if constexpr (std::is_signed_v<T>) {
            const long long v = std::stoll(text, &pos);
            if (pos != text.size() || v < std::numeric_limits<T>::min() ||
                v > std::numeric_limits<T>::max())
                throw std::invalid_argument(text);
            return static_cast<T>(v);
        } else {
            // stoull silently wraps negatives, so reject them up front
            if (text.find('-') != std::string::npos) throw std::invalid_argument(text);
            const unsigned long long v = std::stoull(text, &pos);
            if (pos != text.size() || v > std::numeric_limits<T>::max())
                throw std::invalid_argument(text);
            return static_cast<T>(v);
        }
    } catch (const std::exception&) {
        throw pscox::ConfigInvalid("config key '" + key + "': cannot parse '" + text + "'");
    }
}

struct ConfigBinding {
    std::string key;
    const CLI::Option* opt;
    std::function<void(const std::string&)> apply;
};

std::string config_key(const CLI::Option* opt) {
    if (!opt->get_lnames().empty()) return opt->get_lnames().front();
    return opt->get_single_name();
}

template <typename T>
ConfigBinding bind_number(const CLI::Option* opt, T& dst) {
    std::string key = config_key(opt);
    return {key, opt,
            [key, &dst](const std::string& v) { dst = parse_config_number<T>(key, v); }};
}

ConfigBinding bind_string(const CLI::Option* opt, std::string& dst) {
    return {config_key(opt), opt, [&dst](const std::string& v) { dst = v; }};
}

// list-valued keys (subgroups, covariates) take semicolon-separated entries
ConfigBinding bind_list(const CLI::Option* opt, std::vector<std::string>& dst) {
    return {config_key(opt), opt, [&dst](const std::string& v) {
                std::size_t start = 0;
                while (true) {
                    const auto semi = v.find(';', start);
                    const std::string item = trimmed(
                        semi == std::string::npos ? v.substr(start)
                                                  : v.substr(start, semi - start));
                    if (!item.empty()) dst.push_back(item);
                    if (semi == std::string::npos) break;
                    start = semi + 1;
                }
            }};
}

ConfigBinding bind_optional(const CLI::Option* opt, std::optional<double>& dst) {
    std::string key = config_key(opt);
    return {key, opt,
            [key, &dst](const std::string& v) { dst = parse_config_number<double>(key, v); }};
}

void apply_config(const std::string& path, const std::vector<ConfigBinding>& bindings) {
    if (path.empty()) return;
    auto kv = read_config_file(path);
    for (const auto& b : bindings) {
        const auto it = kv.find(b.key);
        if (it == kv.end()) continue;
        if (b.opt->count() == 0) b.apply(it->second);
        kv.erase(it);  // consumed either way; the command line simply won
    }
    if (!kv.empty())
        throw pscox::ConfigInvalid("unknown config key '" + kv.begin()->first + "'");
}

// ---- shared flags ------------------------------------------------------------

struct SharedFlags {
    std::uint64_t seed = 1;
    std::string format = "md";
    std::string out_path;
    unsigned threads = 0;  // 0: all available cores
    std::string config_path;
};

void add_shared(CLI::App* cmd, SharedFlags& sh, std::vector<ConfigBinding>& bind) {
    bind.push_back(bind_number(
        cmd->add_option("--seed", sh.seed, "Random seed")->capture_default_str(), sh.seed));
    bind.push_back(bind_string(cmd->add_option("--format", sh.format, "Output format: csv, md, json")
                                   ->check(CLI::IsMember({"csv", "md", "json"}))
                                   ->capture_default_str(),
                               sh.format));
    bind.push_back(bind_string(
        cmd->add_option("--out", sh.out_path, "Write the report to this file instead of stdout"),
        sh.out_path));
    bind.push_back(bind_number(
        cmd->add_option("--threads", sh.threads, "Worker threads (0 = all cores)")
            ->capture_default_str(),
        sh.threads));
    cmd->add_option("--config", sh.config_path,
                    "Read options from a key=value file (command line wins)");
}

int dispatch(int argc, char** argv) {
    CLI::App app{"Propensity-score-weighted Cox regression for a binary treatment"};
    app.require_subcommand(1);

    // ---- analyze -----------------------------------------------------------
    auto* an = app.add_subcommand("analyze", "Fit weighted Cox models to a CSV cohort");
    SharedFlags an_sh;
    std::vector<ConfigBinding> an_bind;
    std::string an_input, an_estimands = "ate", an_scope = "subgroup";
    std::vector<std::string> an_subgroups;
    pscox::ColumnMap an_cols;
    double an_level = 0.95;
    an_bind.push_back(
        bind_string(an->add_option("input,--input", an_input, "Cohort CSV file"), an_input));
    an_bind.push_back(bind_string(
        an->add_option("--estimand", an_estimands, "Comma-separated list: ate,att,ato")
            ->capture_default_str(),
        an_estimands));
    an_bind.push_back(bind_list(
        an->add_option("--subgroup", an_subgroups,
                       "Subgroup spec like \"age>=70\" (repeatable); comparators ==, >=, <=, >, <")
            ->take_all(),
        an_subgroups));
    an_bind.push_back(bind_string(
        an->add_option("--ps-scope", an_scope,
                       "Propensity model for subgroups: refit within the subgroup, or reuse the "
                       "full-cohort fit")
            ->check(CLI::IsMember({"subgroup", "full"}))
            ->capture_default_str(),
        an_scope));
    an_bind.push_back(bind_number(
        an->add_option("--level", an_level, "Confidence level")->capture_default_str(), an_level));
    an_bind.push_back(bind_string(
        an->add_option("--time-col", an_cols.time, "Column holding follow-up time")
            ->capture_default_str(),
        an_cols.time));
    an_bind.push_back(bind_string(
        an->add_option("--event-col", an_cols.event, "Column holding the event indicator")
            ->capture_default_str(),
        an_cols.event));
    an_bind.push_back(bind_string(an->add_option("--treatment-col", an_cols.treatment,
                                                 "Column holding the treatment indicator")
                                      ->capture_default_str(),
                                  an_cols.treatment));
    an_bind.push_back(bind_list(
        an->add_option("--covariate", an_cols.covariates,
                       "Covariate column (repeatable; default: every remaining column)")
            ->take_all(),
        an_cols.covariates));
    add_shared(an, an_sh, an_bind);

    // ---- simulate ----------------------------------------------------------
    auto* sim = app.add_subcommand("simulate", "Monte Carlo coverage study");
    SharedFlags sim_sh;
    std::vector<ConfigBinding> sim_bind;
    int sim_scenario = 1;
    std::string sim_estimand = "ate", sim_true_hr = "compute";
    pscox::McConfig mc;
    std::optional<double> ov_alpha1, ov_alpha2, ov_beta1, ov_beta2, ov_event_rate, ov_censor_rate;
    sim_bind.push_back(bind_number(
        sim->add_option("--scenario", sim_scenario, "Scenario preset: 1 or 2")
            ->capture_default_str(),
        sim_scenario));
    sim_bind.push_back(bind_number(
        sim->add_option("--n", mc.n, "Sample size per replication")->capture_default_str(), mc.n));
    sim_bind.push_back(bind_number(
        sim->add_option("--reps", mc.replications, "Number of replications")->capture_default_str(),
        mc.replications));
    sim_bind.push_back(bind_string(
        sim->add_option("--estimand", sim_estimand, "Weighting scheme: ate, att, or ato")
            ->capture_default_str(),
        sim_estimand));
    sim_bind.push_back(bind_string(
        sim->add_option("--true-hr", sim_true_hr,
                        "True log hazard ratio: a number, or \"compute\" to approximate it")
            ->capture_default_str(),
        sim_true_hr));
    sim_bind.push_back(bind_number(
        sim->add_option("--true-hr-samples", mc.true_hr_samples,
                        "Samples used when computing the true log HR")
            ->capture_default_str(),
        mc.true_hr_samples));
    sim_bind.push_back(bind_number(
        sim->add_option("--level", mc.level, "Confidence level")->capture_default_str(), mc.level));
    sim_bind.push_back(bind_optional(
        sim->add_option("--alpha1", ov_alpha1, "Override scenario alpha1"), ov_alpha1));
    sim_bind.push_back(bind_optional(
        sim->add_option("--alpha2", ov_alpha2, "Override scenario alpha2"), ov_alpha2));
    sim_bind.push_back(
        bind_optional(sim->add_option("--beta1", ov_beta1, "Override scenario beta1"), ov_beta1));
    sim_bind.push_back(
        bind_optional(sim->add_option("--beta2", ov_beta2, "Override scenario beta2"), ov_beta2));
    sim_bind.push_back(bind_optional(
        sim->add_option("--base-event-rate", ov_event_rate, "Override baseline event rate"),
        ov_event_rate));
    sim_bind.push_back(bind_optional(
        sim->add_option("--censor-rate", ov_censor_rate, "Override censoring rate"),
        ov_censor_rate));
    add_shared(sim, sim_sh, sim_bind);

    // ---- true-hr -----------------------------------------------------------
    auto* th = app.add_subcommand("true-hr", "Approximate the true marginal log hazard ratio");
    SharedFlags th_sh;
    std::vector<ConfigBinding> th_bind;
    int th_scenario = 1;
    std::string th_estimand = "ate";
    std::size_t th_samples = 5000000;
    th_bind.push_back(bind_number(
        th->add_option("--scenario", th_scenario, "Scenario preset: 1 or 2")->capture_default_str(),
        th_scenario));
    th_bind.push_back(bind_string(
        th->add_option("--estimand", th_estimand, "Weighting scheme: ate, att, or ato")
            ->capture_default_str(),
        th_estimand));
    th_bind.push_back(bind_number(
        th->add_option("--samples,--m", th_samples, "Monte Carlo sample count (>= 1e5)")
            ->capture_default_str(),
        th_samples));
    add_shared(th, th_sh, th_bind);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;  // bad flags are config errors
    }

    if (an->parsed()) {
        apply_config(an_sh.config_path, an_bind);
        if (an_input.empty())
            throw pscox::ConfigInvalid("analyze needs a cohort CSV (positional or input= key)");
        if (an_scope != "subgroup" && an_scope != "full")
            throw pscox::ConfigInvalid("ps-scope must be 'subgroup' or 'full', got '" + an_scope +
                                       "'");
        pscox::AnalysisConfig cfg;
        cfg.input_path = an_input;
        cfg.columns = an_cols;
        cfg.estimands = parse_estimand_list(an_estimands);
        for (const auto& s : an_subgroups) cfg.subgroups.push_back(pscox::parse_subgroup(s));
        cfg.ps_scope = an_scope == "full" ? pscox::PsScope::full : pscox::PsScope::subgroup;
        cfg.level = an_level;
        const auto rows = pscox::analyze_file(cfg);
        write_output(pscox::render(rows, cfg.level, pscox::format_from_token(an_sh.format)),
                     an_sh.out_path);
        return 0;
    }

    if (sim->parsed()) {
        apply_config(sim_sh.config_path, sim_bind);
        mc.scenario = pscox::ScenarioConfig::preset(sim_scenario);
        mc.scenario_id = sim_scenario;
        if (ov_alpha1) mc.scenario.alpha1 = *ov_alpha1;
        if (ov_alpha2) mc.scenario.alpha2 = *ov_alpha2;
        if (ov_beta1) mc.scenario.beta1 = *ov_beta1;
        if (ov_beta2) mc.scenario.beta2 = *ov_beta2;
        if (ov_event_rate) mc.scenario.base_event_rate = *ov_event_rate;
        if (ov_censor_rate) mc.scenario.censor_rate = *ov_censor_rate;
        mc.estimand = pscox::WeightScheme::from_token(sim_estimand);
        mc.seed = sim_sh.seed;
        if (sim_true_hr != "compute") {
            try {
                std::size_t pos = 0;
                const double v = std::stod(sim_true_hr, &pos);
                if (pos != sim_true_hr.size()) throw std::invalid_argument(sim_true_hr);
                mc.true_log_hr = v;
            } catch (const std::exception&) {
                throw pscox::ConfigInvalid("--true-hr expects a number or \"compute\", got '" +
                                           sim_true_hr + "'");
            }
        }
        const auto report = pscox::run_monte_carlo(mc, sim_sh.threads);
        write_output(pscox::render(report, pscox::format_from_token(sim_sh.format)),
                     sim_sh.out_path);
        return 0;
    }

    // true-hr
    apply_config(th_sh.config_path, th_bind);
    const auto scheme = pscox::WeightScheme::from_token(th_estimand);
    const auto sc = pscox::ScenarioConfig::preset(th_scenario);
    const auto truth =
        pscox::true_log_hr(sc, scheme, th_samples, pscox::Rng(th_sh.seed).fork(0));
    write_output(pscox::render_true_hr(truth, th_scenario, scheme.token(), th_samples, th_sh.seed,
                                       pscox::format_from_token(th_sh.format)),
                 th_sh.out_path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const pscox::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(e.category());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
