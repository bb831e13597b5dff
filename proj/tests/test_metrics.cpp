#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "argsearch/metrics.hpp"
#include "support/oracles.hpp"

using namespace argsearch;

namespace {

Labels random_labels(Rng& rng, std::size_t n, std::uint64_t k) {
  Labels out(n);
  for (auto& l : out) l = static_cast<int>(rng.below(k));
  return out;
}

Labels relabel(const Labels& x, const std::vector<int>& perm) {
  Labels out;
  for (int l : x) out.push_back(perm[static_cast<std::size_t>(l)]);
  return out;
}

std::vector<std::vector<BioTag>> one_sequence(const std::string& tags) {
  std::vector<BioTag> seq;
  for (char c : tags) seq.push_back(bio_from_string(std::string(1, c)));
  return {seq};
}

}  // namespace

TEST_CASE("ARI examples") {
  CHECK(adjusted_rand_index(Labels{0, 0, 1, 1}, Labels{1, 1, 0, 0}) == doctest::Approx(1.0));
  CHECK(adjusted_rand_index(Labels{0, 0, 1, 1}, Labels{0, 0, 0, 0}) == doctest::Approx(0.0));
  const Labels t{0, 0, 0, 1, 1, 1};
  const Labels p{0, 0, 1, 1, 2, 2};
  CHECK(std::abs(adjusted_rand_index(t, p) - oracle::ari_pairs(t, p)) <= 1e-12);
  CHECK_THROWS_AS(adjusted_rand_index(Labels{0, 1}, Labels{0}), DataError);
  CHECK_THROWS_AS(adjusted_rand_index(Labels{0}, Labels{0}), DataError);
}

TEST_CASE("homogeneity and completeness examples") {
  const auto same = homogeneity_completeness(Labels{0, 0, 1, 1}, Labels{5, 5, 2, 2});
  CHECK(same.homogeneity == doctest::Approx(1.0));
  CHECK(same.completeness == doctest::Approx(1.0));
  const auto lumped = homogeneity_completeness(Labels{0, 0, 1, 1}, Labels{0, 0, 0, 0});
  CHECK(lumped.homogeneity == doctest::Approx(0.0));
  CHECK(lumped.completeness == doctest::Approx(1.0));
  // H(K) = ln 4, H(K|C) = ln 2 -> Co = 1 - ln2/ln4 = 0.5.
  const auto split = homogeneity_completeness(Labels{0, 0, 1, 1}, Labels{0, 1, 2, 3});
  CHECK(split.homogeneity == doctest::Approx(1.0));
  CHECK(split.completeness == doctest::Approx(0.5));
}

TEST_CASE("BCubed examples") {
  const auto perfect = bcubed(Labels{0, 0, 1}, Labels{3, 3, 4});
  CHECK(perfect.f1 == doctest::Approx(1.0));
  const auto lumped = bcubed(Labels{0, 0, 1, 1}, Labels{0, 0, 0, 0});
  CHECK(lumped.precision == doctest::Approx(0.5));
  CHECK(lumped.recall == doctest::Approx(1.0));
  CHECK(lumped.f1 == doctest::Approx(2.0 / 3.0));
  const auto single = bcubed(Labels{0, 0, 0, 1}, Labels{0, 1, 2, 3});
  CHECK(single.precision == doctest::Approx(1.0));
  CHECK(single.recall == doctest::Approx((3 * (1.0 / 3.0) + 1.0) / 4.0));
}

TEST_CASE("noise modes") {
  const Labels t{0, 0, 1, 1, 2};
  const Labels p{0, 0, kNoiseId, kNoiseId, kNoiseId};
  // Single cluster: noise {2,3,4} is one cluster.
  const auto sc = bcubed(t, p, NoiseMode::kSingleCluster);
  const auto o_sc = oracle::bcubed(t, Labels{0, 0, 9, 9, 9});
  CHECK(sc.precision == doctest::Approx(o_sc.precision));
  CHECK(sc.recall == doctest::Approx(o_sc.recall));
  const auto sg = bcubed(t, p, NoiseMode::kSingletons);
  const auto o_sg = oracle::bcubed(t, Labels{0, 0, 7, 8, 9});
  CHECK(sg.f1 == doctest::Approx(o_sg.f1));
  const auto ex = bcubed(t, p, NoiseMode::kExclude);
  CHECK(ex.f1 == doctest::Approx(1.0));
  CHECK_THROWS_AS(bcubed(t, Labels(5, kNoiseId), NoiseMode::kExclude), DataError);

  const auto e = evaluate_clustering(t, p, NoiseMode::kSingleCluster);
  CHECK(e.n_clusters == 1);
  CHECK(e.noise_fraction == doctest::Approx(0.6));
  CHECK(noise_mode_from_string("exclude") == NoiseMode::kExclude);
  CHECK(to_string(NoiseMode::kSingletons) == "singletons");
  CHECK_THROWS_AS(noise_mode_from_string("drop"), ConfigError);
}

TEST_CASE("clustering metrics agree with brute-force oracles") {
  Rng rng(17);
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t n = 2 + rng.below(9);
    const Labels t = random_labels(rng, n, 1 + rng.below(4));
    const Labels p = random_labels(rng, n, 1 + rng.below(5));
    CHECK(std::abs(adjusted_rand_index(t, p) - oracle::ari_pairs(t, p)) <= 1e-12);
    CHECK(std::abs(adjusted_rand_index(t, p) - adjusted_rand_index(p, t)) <= 1e-12);
    const auto hc = homogeneity_completeness(t, p);
    const auto [h, c] = oracle::homogeneity_completeness(t, p);
    CHECK(std::abs(hc.homogeneity - h) <= 1e-12);
    CHECK(std::abs(hc.completeness - c) <= 1e-12);
    const auto b = bcubed(t, p);
    const auto ob = oracle::bcubed(t, p);
    CHECK(std::abs(b.precision - ob.precision) <= 1e-12);
    CHECK(std::abs(b.recall - ob.recall) <= 1e-12);
    CHECK(std::abs(b.f1 - ob.f1) <= 1e-12);

    const auto e = evaluate_clustering(t, p, NoiseMode::kSingleCluster);
    CHECK(e.ari >= -1.0);
    CHECK(e.ari <= 1.0 + 1e-12);
    for (double v : {e.homogeneity, e.completeness, e.bcubed_precision, e.bcubed_recall, e.bcubed_f1}) {
      CHECK(v >= -1e-12);
      CHECK(v <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("relabelling invariance") {
  Rng rng(23);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 3 + rng.below(8);
    const Labels t = random_labels(rng, n, 3);
    const Labels p = random_labels(rng, n, 4);
    std::vector<int> perm_t{0, 1, 2};
    std::vector<int> perm_p{0, 1, 2, 3};
    rng.shuffle(perm_t);
    rng.shuffle(perm_p);
    const Labels t2 = relabel(t, perm_t);
    const Labels p2 = relabel(p, perm_p);
    CHECK(adjusted_rand_index(t2, p2) == doctest::Approx(adjusted_rand_index(t, p)).epsilon(1e-12));
    const auto a = homogeneity_completeness(t, p);
    const auto b = homogeneity_completeness(t2, p2);
    CHECK(a.homogeneity == doctest::Approx(b.homogeneity).epsilon(1e-12));
    CHECK(a.completeness == doctest::Approx(b.completeness).epsilon(1e-12));
    CHECK(bcubed(t, p).f1 == doctest::Approx(bcubed(t2, p2).f1).epsilon(1e-12));
    const auto self = bcubed(t, t);
    CHECK(self.precision == self.recall);
  }
}

TEST_CASE("encode_labels") {
  const std::vector<std::string> s{"b", "a", "b", "c"};
  CHECK(encode_labels(s) == Labels{0, 1, 0, 2});
}

TEST_CASE("majority baseline on a 71.9% I pool") {
  std::string tags(140, 'B');
  tags += std::string(719, 'I');
  tags += std::string(141, 'O');
  const auto truth = one_sequence(tags);
  const auto pred = one_sequence(std::string(tags.size(), 'I'));
  const TaggingEval e = tagging_eval(truth, pred);
  CHECK(std::abs(e.f1_macro - 0.279) <= 0.001);
  CHECK(std::abs(e.f1_weighted - 0.602) <= 0.001);
  CHECK(e.f1[0] == 0.0);
  CHECK(e.f1[2] == 0.0);
  CHECK(e.precision[0] == 0.0);
  CHECK(e.recall[1] == 1.0);
}

TEST_CASE("tagging eval against a direct formula oracle") {
  const std::array<std::array<long long, kNumTags>, kNumTags> conf{{{30, 5, 5}, {4, 50, 6}, {1, 9, 40}}};
  const TaggingEval e = tagging_eval_from_confusion(conf);
  double macro = 0.0;
  double weighted = 0.0;
  double total = 0.0;
  std::array<double, 3> f1{};
  for (int c = 0; c < 3; ++c) {
    double row = 0.0;
    double col = 0.0;
    for (int k = 0; k < 3; ++k) {
      row += static_cast<double>(conf[c][k]);
      col += static_cast<double>(conf[k][c]);
    }
    const double tp = static_cast<double>(conf[c][c]);
    const double p = tp / col;
    const double r = tp / row;
    f1[c] = 2 * p * r / (p + r);
    CHECK(e.precision[c] == doctest::Approx(p).epsilon(1e-12));
    CHECK(e.recall[c] == doctest::Approx(r).epsilon(1e-12));
    CHECK(e.support[c] == static_cast<long long>(row));
    macro += f1[c] / 3.0;
    weighted += f1[c] * row;
    total += row;
  }
  CHECK(e.f1_macro == doctest::Approx(macro).epsilon(1e-12));
  CHECK(e.f1_weighted == doctest::Approx(weighted / total).epsilon(1e-12));
  CHECK(e.f1_macro_bi == doctest::Approx((f1[0] + f1[1]) / 2.0).epsilon(1e-12));
  CHECK(e.f1_weighted >= *std::min_element(f1.begin(), f1.end()));
  CHECK(e.f1_weighted <= *std::max_element(f1.begin(), f1.end()));
}

TEST_CASE("tagging eval: perfect, pooled, mismatched") {
  const auto a = one_sequence("BIIOBIO");
  const TaggingEval perfect = tagging_eval(a, a);
  CHECK(perfect.f1_macro == 1.0);
  CHECK(perfect.f1_weighted == 1.0);
  CHECK(perfect.f1_macro_bi == 1.0);

  std::vector<std::vector<BioTag>> two = one_sequence("BIO");
  two.push_back(one_sequence("OBI")[0]);
  const TaggingEval pooled = tagging_eval(two, two);
  long long sum = 0;
  for (const auto& row : pooled.confusion) sum += std::accumulate(row.begin(), row.end(), 0LL);
  CHECK(sum == 6);
  for (int c = 0; c < kNumTags; ++c) {
    CHECK(std::accumulate(pooled.confusion[c].begin(), pooled.confusion[c].end(), 0LL) == pooled.support[c]);
  }

  CHECK_THROWS_AS(tagging_eval(a, one_sequence("BIO")), DataError);
  CHECK_THROWS_AS(tagging_eval(two, a), DataError);
}

TEST_CASE("Krippendorff alpha") {
  using R = std::vector<std::vector<std::optional<int>>>;
  CHECK(krippendorff_alpha_nominal(R{{0, 0, 0}, {1, 1, 1}, {2, 2, std::nullopt}}) == doctest::Approx(1.0));

  // Coincidences: o_aa = 2, o_ab = o_ba = 1, o_bb = 4; n_a = 3, n_b = 5, n = 8.
  // alpha = 1 - (n - 1) * (o_ab + o_ba) / (2 n_a n_b) = 1 - 7 * 2 / 30.
  const R table{{0, 0}, {0, 1}, {1, 1}, {1, 1}};
  CHECK(std::abs(krippendorff_alpha_nominal(table) - 16.0 / 30.0) <= 1e-12);

  const R chance{{0, 1, 2}, {1, 2, 0}, {2, 0, 1}, {0, 2, 1}};
  CHECK(krippendorff_alpha_nominal(chance) <= 0.0);

  // Units with a single rating are not pairable.
  CHECK(krippendorff_alpha_nominal(R{{0, 0}, {0, 1}, {1, 1}, {1, 1}, {1, std::nullopt}}) ==
        doctest::Approx(16.0 / 30.0));
  CHECK_THROWS_AS(krippendorff_alpha_nominal(R{{0, 1}, {1, std::nullopt}}), DataError);
  CHECK_THROWS_AS(krippendorff_alpha_nominal(R{{0, 0}, {0, 0}}), DataError);
}

TEST_CASE("JSON reports") {
  const auto cj = to_json(evaluate_clustering(Labels{0, 0, 1}, Labels{0, 0, 1}, NoiseMode::kSingleCluster));
  for (const char* key : {"ari", "homogeneity", "completeness", "bcubed_precision", "bcubed_recall",
                          "bcubed_f1", "n_clusters", "noise_fraction"}) {
    CHECK(cj.contains(key));
  }
  const auto a = one_sequence("BIO");
  const auto tj = to_json(tagging_eval(a, a));
  CHECK(tj.at("f1_macro_BI").get<double>() == 1.0);
  CHECK(tj.at("confusion").size() == 3);
  CHECK(tj.at("confusion")[1][1].get<long long>() == 1);
}
