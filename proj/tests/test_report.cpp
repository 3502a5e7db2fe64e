#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pscox/analysis.hpp"
#include "pscox/report.hpp"
#include "pscox/simulation.hpp"

using namespace pscox;
namespace fs = std::filesystem;

namespace {

AnalysisRow ok_row() {
    AnalysisRow r;
    r.estimand = "ate";
    r.subgroup = "overall";
    r.n = 322;
    r.events = 68;
    r.log_hr = -0.1481234;
    r.hazard_ratio = std::exp(r.log_hr);
    r.se_robust = 0.2871111;
    r.se_corrected = 0.2369999;
    r.ratio_robust_over_corrected = r.se_robust / r.se_corrected;
    r.ci_robust = {-0.71, 0.41};
    r.ci_corrected = {-0.61, 0.31};
    r.ok = true;
    return r;
}

AnalysisRow failed_row() {
    AnalysisRow r;
    r.estimand = "att";
    r.subgroup = "L1==1";
    r.n = 40;
    r.events = 0;
    r.status = "monotone-likelihood";
    return r;
}

// synthetic cohort large enough that all three estimands fit cleanly
Cohort synthetic_cohort() {
    Rng rng(404);
    Cohort c({"L1", "age"});
    for (int i = 0; i < 400; ++i) {
        const double l1 = rng.bernoulli(0.5) ? 1.0 : 0.0;
        const double age = 60.0 + 10.0 * rng.normal();
        const double e = 1.0 / (1.0 + std::exp(-(-0.8 + 0.9 * l1 + 0.02 * (age - 60.0))));
        const int a = rng.bernoulli(e) ? 1 : 0;
        const double t = rng.exponential(0.05 * std::exp(0.4 * a - 0.3 * l1));
        const int d = rng.bernoulli(0.9) ? 1 : 0;
        c.add({{l1, age}, a, t, d});
    }
    return c;
}

}  // namespace

TEST_CASE("format tokens", "[report]") {
    CHECK(format_from_token("csv") == OutputFormat::csv);
    CHECK(format_from_token("md") == OutputFormat::md);
    CHECK(format_from_token("json") == OutputFormat::json);
    CHECK_THROWS_AS(format_from_token("xml"), ConfigInvalid);
}

TEST_CASE("analysis CSV carries the subgroup-table column layout", "[report]") {
    const std::vector<AnalysisRow> rows = {ok_row(), failed_row()};
    const std::string csv = render(rows, 0.95, OutputFormat::csv);
    const auto first_nl = csv.find('\n');
    CHECK(csv.substr(0, first_nl) ==
          "Weight,Subgroup,log HR,Robust SE,Corrected sandwich SE,"
          "Robust SE /Corrected sandwich SE,Status");
    CHECK(csv.find("ate,overall,") != std::string::npos);
    CHECK(csv.find("att,L1==1,,,,,monotone-likelihood") != std::string::npos);
    // machine format: full precision survives a round trip through the text
    const auto row_start = csv.find("ate,overall,");
    const char* cell = csv.c_str() + row_start + std::string("ate,overall,").size();
    CHECK(std::strtod(cell, nullptr) == -0.1481234);
}

TEST_CASE("analysis markdown prints three decimals", "[report]") {
    const std::vector<AnalysisRow> rows = {ok_row()};
    const std::string md = render(rows, 0.95, OutputFormat::md);
    CHECK(md.find("| Weight") == 0);
    CHECK(md.find("-0.148") != std::string::npos);
    CHECK(md.find("0.287") != std::string::npos);
    CHECK(md.find("0.237") != std::string::npos);
    CHECK(md.find("1.211") != std::string::npos);  // ratio to 3 decimals
    CHECK(md.find("-0.1481234") == std::string::npos);
}

TEST_CASE("analysis JSON fields and null handling", "[report]") {
    const std::vector<AnalysisRow> rows = {ok_row(), failed_row()};
    const auto j = nlohmann::json::parse(render(rows, 0.95, OutputFormat::json));
    REQUIRE(j["rows"].size() == 2);
    const auto& r0 = j["rows"][0];
    CHECK(r0["weight"] == "ate");
    CHECK(r0["subgroup"] == "overall");
    CHECK(r0["status"] == "ok");
    CHECK(r0["theta_hat"].get<double>() == Catch::Approx(-0.1481234));
    CHECK(r0["se_robust"].get<double>() == Catch::Approx(0.2871111));
    CHECK(r0["ratio_robust_over_corrected"].get<double>() ==
          Catch::Approx(0.2871111 / 0.2369999));
    CHECK(r0["ci_robust"][0].get<double>() == Catch::Approx(-0.71));
    const auto& r1 = j["rows"][1];
    CHECK(r1["status"] == "monotone-likelihood");
    CHECK(r1["theta_hat"].is_null());
    CHECK(r1["se_corrected"].is_null());
}

TEST_CASE("variance report JSON exposes exactly the documented fields", "[report]") {
    VarianceReport v;
    v.theta_hat = 0.25;
    v.se_robust = 0.2;
    v.se_corrected = 0.25;
    v.ci_robust = {0.0, 0.5};
    v.ci_corrected = {-0.1, 0.6};
    const auto j = to_json(v);
    CHECK(j["theta_hat"] == 0.25);
    CHECK(j["se_robust"] == 0.2);
    CHECK(j["se_corrected"] == 0.25);
    CHECK(j["ratio_robust_over_corrected"].get<double>() == Catch::Approx(0.8));
    CHECK(j["ci_robust"][1] == 0.5);
    CHECK(j["ci_corrected"][0] == -0.1);
    CHECK(j.size() == 6);
}

TEST_CASE("simulation report serializations", "[report]") {
    SimulationReport r;
    r.scenario = ScenarioConfig::preset(2);
    r.scenario_id = 2;
    r.estimand = "att";
    r.n = 1000;
    r.replications = 1000;
    r.completed = 1000;
    r.seed = 1;
    r.true_log_hr = 0.4006;
    r.mean_log_hr = 0.4024;
    r.bias = 0.0018;
    r.mean_width_robust = 0.39699;
    r.mean_width_corrected = 0.45511;
    r.coverage_robust = 0.91199;
    r.coverage_corrected = 0.95049;
    r.mean_censor_fraction = 0.0165;
    r.mean_treated_fraction = 0.114;

    const std::string csv = render(r, OutputFormat::csv);
    CHECK(csv.find("Weight,N,True log HR,Bias of log HR,"
                   "Mean confidence interval width (Robust variance),"
                   "Mean confidence interval width (Corrected variance),"
                   "Coverage probability (Robust variance),"
                   "Coverage probability (Corrected variance),") == 0);
    CHECK(csv.find("ATT,1000,") != std::string::npos);

    const std::string md = render(r, OutputFormat::md);
    CHECK(md.find("0.397") != std::string::npos);
    CHECK(md.find("0.455") != std::string::npos);
    CHECK(md.find("0.912") != std::string::npos);
    CHECK(md.find("0.950") != std::string::npos);   // printed to 3 decimals
    CHECK(md.find("0.4006") != std::string::npos);  // truth to 4 decimals

    const auto j = nlohmann::json::parse(render(r, OutputFormat::json));
    CHECK(j["coverage_probability"]["robust"].get<double>() == Catch::Approx(0.91199));
    CHECK(j["mean_ci_width"]["corrected"].get<double>() == Catch::Approx(0.45511));
    CHECK(j["bias_of_log_hr"].get<double>() == Catch::Approx(0.0018));
    CHECK(j["failures"] == 0);
    CHECK(j["mean_censor_fraction"].get<double>() == Catch::Approx(0.0165));
}

TEST_CASE("true-hr serializations", "[report]") {
    TrueHrResult t{0.31452, 0.0021};
    const std::string csv = render_true_hr(t, 1, "ate", 5000000, 9, OutputFormat::csv);
    CHECK(csv.find("Weight,Samples,True log HR,MC SE,Seed") == 0);
    CHECK(csv.find("ATE,5000000,") != std::string::npos);  // tables uppercase the scheme
    const std::string md = render_true_hr(t, 1, "ate", 5000000, 9, OutputFormat::md);
    CHECK(md.find("0.3145") != std::string::npos);
    const auto j = nlohmann::json::parse(render_true_hr(t, 1, "ate", 5000000, 9,
                                                        OutputFormat::json));
    CHECK(j["true_log_hr"].get<double>() == Catch::Approx(0.31452));
    CHECK(j["mc_se"].get<double>() == Catch::Approx(0.0021));
    CHECK(j["scenario"] == 1);
}

TEST_CASE("analyze produces one row per estimand and subgroup", "[report]") {
    const auto c = synthetic_cohort();
    AnalysisConfig cfg;
    cfg.estimands = {WeightScheme::ate(), WeightScheme::att(), WeightScheme::ato()};
    cfg.subgroups = {parse_subgroup("L1==1"), parse_subgroup("L1<1")};
    const auto rows = analyze(c, cfg);
    REQUIRE(rows.size() == 9);  // 3 estimands x (overall + 2 subgroups)
    for (std::size_t i = 0; i < rows.size(); i += 3) CHECK(rows[i].subgroup == "overall");
    for (const auto& r : rows) {
        INFO(r.estimand << " / " << r.subgroup);
        CHECK(r.ok);
        CHECK(r.status == "ok");
        CHECK(r.se_robust > 0.0);
        CHECK(r.se_corrected > 0.0);
        CHECK(r.ratio_robust_over_corrected > 0.0);
        CHECK(r.ci_corrected.lo < r.log_hr);
        CHECK(r.ci_corrected.hi > r.log_hr);
    }
}

TEST_CASE("analyze surfaces a monotone subgroup as a status row", "[report]") {
    Rng rng(17);
    Cohort c({"flag"});
    for (int i = 0; i < 160; ++i) {
        const double flag = i < 40 ? 1.0 : 0.0;
        const double e = 0.2 + 0.3 * flag;
        const int a = rng.bernoulli(e) ? 1 : 0;
        // inside the flagged stratum no treated subject ever has an event
        const int d = (flag == 1.0 && a == 1) ? 0 : 1;
        c.add({{flag}, a, 1.0 + rng.uniform01() * 50.0, d});
    }
    AnalysisConfig cfg;
    cfg.estimands = {WeightScheme::ate()};
    cfg.subgroups = {parse_subgroup("flag==1")};
    const auto rows = analyze(c, cfg);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].ok);
    CHECK_FALSE(rows[1].ok);
    CHECK(rows[1].status == "monotone-likelihood");
    CHECK(rows[1].n == 40);
    // the failed row renders with empty numeric cells, not garbage
    const std::string csv = render(rows, 0.95, OutputFormat::csv);
    CHECK(csv.find(",,,,,monotone-likelihood") != std::string::npos);
}

TEST_CASE("analyze rejects unknown subgroup covariates up front", "[report]") {
    const auto c = synthetic_cohort();
    AnalysisConfig cfg;
    cfg.subgroups = {parse_subgroup("bmi>=25")};
    CHECK_THROWS_AS(analyze(c, cfg), UnknownCovariate);
    cfg.subgroups.clear();
    cfg.level = 1.0;
    CHECK_THROWS_AS(analyze(c, cfg), InvalidLevel);
}

TEST_CASE("ps-scope full reuses the full-cohort propensity for subgroups", "[report]") {
    const auto c = synthetic_cohort();
    AnalysisConfig cfg;
    cfg.estimands = {WeightScheme::att()};
    cfg.subgroups = {parse_subgroup("age>=60")};
    cfg.ps_scope = PsScope::subgroup;
    const auto refit = analyze(c, cfg);
    cfg.ps_scope = PsScope::full;
    const auto reuse = analyze(c, cfg);
    REQUIRE(refit.size() == 2);
    REQUIRE(reuse.size() == 2);
    // overall rows agree (same population); subgroup rows must differ because
    // the propensity models are fit on different samples
    CHECK(refit[0].log_hr == Catch::Approx(reuse[0].log_hr).margin(1e-12));
    CHECK(refit[1].ok);
    CHECK(reuse[1].ok);
    CHECK(refit[1].log_hr != reuse[1].log_hr);
}

TEST_CASE("analyze_file does not modify its input", "[report]") {
    const auto path = fs::temp_directory_path() / "pscox_test_analyze_input.csv";
    {
        std::ofstream f(path, std::ios::binary);
        f << "time,event,treatment,L1\n";
        Rng rng(55);
        for (int i = 0; i < 200; ++i) {
            const double l1 = rng.bernoulli(0.5) ? 1.0 : 0.0;
            const int a = rng.bernoulli(0.25 + 0.3 * l1) ? 1 : 0;
            const int d = rng.bernoulli(0.9) ? 1 : 0;
            f << 1.0 + i * 0.25 << ',' << d << ',' << a << ',' << l1 << '\n';
        }
    }
    std::ifstream before_f(path, std::ios::binary);
    const std::string before((std::istreambuf_iterator<char>(before_f)), {});
    before_f.close();

    AnalysisConfig cfg;
    cfg.input_path = path.string();
    cfg.estimands = {WeightScheme::ate()};
    const auto rows = analyze_file(cfg);
    CHECK(rows.size() == 1);
    CHECK(rows[0].ok);

    std::ifstream after_f(path, std::ios::binary);
    const std::string after((std::istreambuf_iterator<char>(after_f)), {});
    CHECK(before == after);
}
