#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"

#include "cgi/error.hpp"
#include "cgi/harness.hpp"

using namespace cgi;
using json = nlohmann::json;

namespace {

RunConfig small_config(std::uint64_t seed) {
  json j = {{"seed", seed},
            {"hidden", 16},
            {"epochs", 150},
            {"patience", 30},
            {"k_mc", 8},
            {"synthetic",
             {{"nodes", 300}, {"classes", 3}, {"train_per_class", 10}, {"valid", 110}, {"test", 150}}},
            {"perturb", {{"ratio", 0.3}}},
            {"svm", {{"c_grid", {1.0, 10.0}}, {"gamma_grid", {0.1, 1.0}}}}};
  return parse_run_config(j);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("decile grouping") {
  std::vector<double> scores(20);
  std::iota(scores.rbegin(), scores.rend(), 0.0);
  std::vector<char> correct(20, 0);
  for (int i = 0; i < 20; ++i) correct[i] = i >= 10;
  const auto asc = decile_analysis(scores, correct, 10, SortOrder::kAscending);
  for (const auto& g : asc) CHECK(g.size == 2);
  // Ascending scores visit nodes 19, 18, ... first, which are all correct.
  CHECK(asc[0].accuracy == 1.0);
  CHECK(asc[9].accuracy == 0.0);
  CHECK(asc[0].mean_score == doctest::Approx(0.5));
  const auto desc = decile_analysis(scores, correct, 10, SortOrder::kDescending);
  CHECK(desc[0].accuracy == 0.0);

  const std::vector<char> all_true(23, 1);
  std::vector<double> s23(23, 1.0);
  const auto uneven = decile_analysis(s23, all_true, 10);
  CHECK(uneven[0].size == 3);
  CHECK(uneven[2].size == 3);
  CHECK(uneven[3].size == 2);
  for (const auto& g : uneven) CHECK(g.accuracy == 1.0);

  std::vector<double> few(5, 0.0);
  std::vector<char> few_c(5, 1);
  CHECK_THROWS_AS(decile_analysis(few, few_c, 10), ValidationError);
  std::vector<double> nan_scores(20, std::nan(""));
  CHECK_THROWS_AS(decile_analysis(nan_scores, correct, 10), ValidationError);
}

TEST_CASE("ties keep node order") {
  const std::vector<double> s{1.0, 0.0, 1.0, 0.0};
  CHECK(rank_order(s, SortOrder::kAscending) == std::vector<int>{1, 3, 0, 2});
  CHECK(rank_order(s, SortOrder::kDescending) == std::vector<int>{0, 2, 1, 3});
}

TEST_CASE("overlap matrix") {
  std::vector<int> rank(30);
  std::iota(rank.begin(), rank.end(), 0);
  const Matrix same = overlap_matrix(rank, rank, 10);
  CHECK(same.isApprox(Matrix::Identity(10, 10)));
  std::vector<int> reversed(rank.rbegin(), rank.rend());
  const Matrix anti = overlap_matrix(rank, reversed, 10);
  for (int i = 0; i < 10; ++i) CHECK(anti(i, 9 - i) == 1.0);

  std::vector<double> noise(30);
  for (int i = 0; i < 30; ++i) noise[i] = std::sin(7.0 * i);
  const Matrix mixed = overlap_matrix(rank, rank_order(noise, SortOrder::kAscending), 10);
  for (int i = 0; i < 10; ++i) CHECK(mixed.row(i).sum() == doctest::Approx(1.0));

  std::vector<int> other = rank;
  other[0] = 99;
  CHECK_THROWS_AS(overlap_matrix(rank, other, 10), ValidationError);
  std::vector<int> repeated = rank;
  repeated[1] = 0;
  CHECK_THROWS_AS(overlap_matrix(repeated, repeated, 10), ValidationError);
}

TEST_CASE("spearman") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> up{2, 4, 9, 10, 11};
  const std::vector<double> down{5, 3, 2, 1, -7};
  CHECK(spearman(x, up) == doctest::Approx(1.0));
  CHECK(spearman(x, down) == doctest::Approx(-1.0));
  const std::vector<double> ties{1, 1, 2, 2, 3};
  CHECK(spearman(x, ties) == doctest::Approx(0.9486832980505138));
  const std::vector<double> flat{1, 1, 1, 1, 1};
  CHECK(spearman(x, flat) == 0.0);
}

TEST_CASE("oracle bound") {
  Matrix hat(4, 2), self(4, 2);
  hat << 1, 0, 1, 0, 0, 1, 0, 1;
  self << 0, 1, 1, 0, 1, 0, 0, 1;
  const auto b = make_bundle(hat, self);
  const std::vector<int> labels{0, 1, 0, 0};
  const std::vector<int> all{0, 1, 2, 3};
  // hat right on {0}, self right on {2}: union of two of four.
  CHECK(oracle_bound(b, labels, all) == 0.5);
}

TEST_CASE("ablation rounds") {
  ChoiceDataset data;
  ChoiceEvalSet eval;
  for (int i = 0; i < 24; ++i) {
    FactorVector f;
    f.self_conf = (i % 2 == 0 ? 0.9 : 0.3) + 0.001 * i;
    f.graph_var = 0.01 * (i % 5);
    f.self_self = 0.5;
    data.rows.push_back({f, i % 2 == 0 ? 1 : -1, i});
    eval.factors.push_back(f);
    eval.hat_correct.push_back(i % 2 == 0);
    eval.self_correct.push_back(i % 2 != 0);
  }
  ChoiceTrainOptions opt;
  opt.c_grid = {1.0};
  opt.gamma_grid = {0.1};
  const auto out = ablate_factors(data, eval, single_factor_rounds(), opt);
  REQUIRE(out.size() == 9);
  CHECK(out.front().name == "all_factors");
  CHECK(out.back().name == "majority_class");
  CHECK(out.back().choice_accuracy == 0.5);
  CHECK(out.front().choice_accuracy == 1.0);
  // Dropping the constant column changes nothing.
  const auto it = std::find_if(out.begin(), out.end(), [](const auto& e) { return e.name == "-self_self"; });
  REQUIRE(it != out.end());
  CHECK(it->choice_accuracy == out.front().choice_accuracy);
  // Dropping the informative column hurts.
  CHECK(out[2].name == "-self_conf");
  CHECK(out[2].choice_accuracy < 1.0);

  std::vector<std::string> everything(FactorVector::kNames.begin(), FactorVector::kNames.end());
  CHECK_THROWS_AS(ablate_factors(data, eval, {everything}, opt), ValidationError);
  CHECK_THROWS_AS(ablate_factors(data, eval, {{"bogus"}}, opt), ValidationError);
}

TEST_CASE("run config parsing") {
  const auto c = small_config(3);
  CHECK(c.seed == 3);
  CHECK(c.train.hidden == 16);
  CHECK(c.synthetic.has_value());
  CHECK(c.svm.c_grid == std::vector<double>{1.0, 10.0});
  CHECK(parse_run_config(to_json(c)).train.seed == c.train.seed);
  CHECK(to_json(parse_run_config(to_json(c))) == to_json(c));

  CHECK_THROWS_AS(parse_run_config(json{{"sede", 1}}), ValidationError);
  CHECK_THROWS_AS(parse_run_config(json{{"k_mc", 1}}), ValidationError);
  CHECK_THROWS_AS(parse_run_config(json{{"tau", 1.0}}), ValidationError);
  CHECK_THROWS_AS(parse_run_config(json{{"epochs", "many"}}), ValidationError);
  CHECK_THROWS_AS(parse_run_config(json{{"choice", {{"mode", "loose"}}}}), ValidationError);
  CHECK_THROWS_AS(load_config_graph(parse_run_config(json::object())), ValidationError);
  CHECK(parse_run_config(json{{"choice", {{"mode", "literal"}}}}).dataset_mode ==
        DatasetMode::kLiteral);
}

TEST_CASE("pipeline run") {
  const auto config = small_config(5);
  const auto r = run_pipeline(config);
  const auto& rep = r.report;
  const auto& labels = r.graph.labels();
  const auto& test = r.graph.splits().test;

  for (double a : {rep.test.appnp, rep.test.self, rep.test.ensemble, rep.test.lway, rep.test.cgi,
                   rep.test.oracle}) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
  CHECK(rep.test_size == 150);
  CHECK(rep.conflict_count <= rep.test_size);
  CHECK(rep.test.oracle >= rep.test.cgi);
  CHECK(rep.test.cgi >= std::min(rep.test.appnp, rep.test.self));
  CHECK(rep.ri_over_appnp == doctest::Approx((rep.test.cgi - rep.test.appnp) / rep.test.appnp));
  CHECK(accuracy(r.z_cgi, labels, test) == rep.test.cgi);
  for (int i = 0; i < r.graph.num_nodes(); ++i) {
    CHECK((r.z_cgi[i] == r.bundle.z_hat[i] || r.z_cgi[i] == r.bundle.z_self[i]));
  }
  REQUIRE(rep.deciles.has_value());
  for (int i = 0; i < 10; ++i) CHECK(rep.deciles->overlap.row(i).sum() == doctest::Approx(1.0));
  CHECK(rep.choice_trained == rep.choice_model.has_value());
  CHECK(rep.choice_trained == rep.fallback_reason.empty());

  const auto j = metrics_json(rep, config);
  CHECK(j["schema"] == "cgi-metrics");
  CHECK(j["relative_improvement"]["over_appnp"].get<double>() ==
        doctest::Approx((j["accuracy"]["cgi"].get<double>() - j["accuracy"]["appnp"].get<double>()) /
                        j["accuracy"]["appnp"].get<double>()));

  const auto dir = std::filesystem::temp_directory_path() / "cgi_pipeline_run";
  std::filesystem::remove_all(dir);
  emit_report(r, dir);
  for (const char* f : {"metrics.json", "predictions.csv", "factors.csv", "losses.csv",
                        "deciles.csv", "overlap.csv", "model.json"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  // Accuracies are recomputable from the prediction dump.
  std::ifstream in(dir / "predictions.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "node,z_hat,z_self,z_ensemble,z_lway,z_cgi");
  std::vector<int> dumped_cgi;
  while (std::getline(in, line)) dumped_cgi.push_back(std::stoi(line.substr(line.rfind(',') + 1)));
  CHECK(accuracy(dumped_cgi, labels, test) == rep.test.cgi);

  // Re-emitting the same result gives the same bytes.
  const auto first = slurp(dir / "predictions.csv");
  emit_report(r, dir);
  CHECK(slurp(dir / "predictions.csv") == first);
  std::filesystem::remove_all(dir);
}

TEST_CASE("pipeline options") {
  SUBCASE("no dropout means no uncertainty") {
    auto config = small_config(2);
    config.tau = 0.0;
    config.analyses = false;
    const auto r = run_pipeline(config);
    CHECK(r.uncertainty.graph_var.isZero(0.0));
    const auto j = metrics_json(r.report, config);
    CHECK_FALSE(j.contains("deciles"));
    CHECK_FALSE(j.contains("ablation"));
  }
  SUBCASE("too little choice data falls back to the graph prediction") {
    auto config = small_config(2);
    config.min_choice_rows = 100000;
    config.analyses = false;
    const auto r = run_pipeline(config);
    CHECK_FALSE(r.report.choice_trained);
    CHECK_FALSE(r.report.fallback_reason.empty());
    CHECK(r.z_cgi == r.bundle.z_hat);
    CHECK(metrics_json(r.report, config)["choice"]["trained"] == false);
  }
}

TEST_CASE("trust-feature pilot") {
  auto config = small_config(4);
  const auto g = load_config_graph(config);
  const auto r = trust_feature_experiment(g, config);
  CHECK(r.bound >= r.plain);
  CHECK(r.bound >= r.trust - 1e-12);
  CHECK_FALSE(r.plain_log.empty());
  CHECK_FALSE(r.trust_log.empty());
  const auto zero = trust_feature_experiment(g, config, true);
  CHECK(std::abs(zero.trust - zero.plain) <= 0.05);
}

TEST_CASE("summaries") {
  const json a = {{"seed", 1}, {"accuracy", {{"cgi", 0.8}}}, {"timing", {{"train", 3.0}}}};
  const json b = {{"seed", 2}, {"accuracy", {{"cgi", 0.6}}}, {"timing", {{"train", 5.0}}}};
  const auto s = summarize_runs({a, b});
  CHECK(s["runs"] == 2);
  CHECK(s["mean"]["accuracy.cgi"].get<double>() == doctest::Approx(0.7));
  CHECK(s["std"]["accuracy.cgi"].get<double>() == doctest::Approx(0.1));
  CHECK_FALSE(s["mean"].contains("timing.train"));
  CHECK_THROWS_AS(summarize_runs({}), ValidationError);
}
