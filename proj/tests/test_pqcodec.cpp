#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "pbr/common.hpp"
#include "pbr/linalg.hpp"
#include "pbr/pqcodec.hpp"
#include "pbr/quantizer.hpp"
#include "test_support.hpp"

using namespace pbr;
using Catch::Approx;

TEST_CASE("pqcodec: one segment is plain k-means", "[pqcodec]") {
  const auto d = gen_synthetic(4, 100, 6, 0.2, 1);
  const auto codec = pq_fit(d, {.num_segments = 1, .seg_k = 8, .kmeans_iters = 10, .seed = 5});
  const auto ref = kmeans_fit(d, 8, {10, derive_seed(5, "pq.seg0")});
  REQUIRE(codec.segment_codebooks.size() == 1);
  REQUIRE(distortion(codec.segment_codebooks[0], d) == Approx(ref.distortion.back()).epsilon(1e-9));
}

TEST_CASE("pqcodec: per-segment distortion equals a refit on sub-vectors", "[pqcodec]") {
  const auto d = test::random_dataset(600, 8, 4);
  const auto codec = pq_fit(d, {.num_segments = 4, .seg_k = 16, .kmeans_iters = 12, .seed = 2});
  for (std::size_t s = 0; s < 4; ++s) {
    const auto seg = pq_segment(d, 4, s);
    const auto refit = kmeans_fit(seg, 16, {12, derive_seed(2, "pq.seg" + std::to_string(s))});
    REQUIRE(distortion(codec.segment_codebooks[s], seg) == Approx(refit.distortion.back()).epsilon(1e-9));
  }
}

TEST_CASE("pqcodec: few distinct sub-vectors quantize exactly", "[pqcodec]") {
  Rng rng(3);
  VectorDataset d(4, 200);
  for (std::size_t i = 0; i < 200; ++i) {
    d.data[i * 4 + 0] = d.data[i * 4 + 1] = static_cast<float>(uniform_index(rng, 4));
    d.data[i * 4 + 2] = d.data[i * 4 + 3] = static_cast<float>(10 + uniform_index(rng, 4));
  }
  const auto codec = pq_fit(d, {.num_segments = 2, .seg_k = 4, .kmeans_iters = 20, .seed = 1});
  const auto codes = pq_encode(codec, d);
  for (std::size_t i = 0; i < 200; ++i) {
    const auto dec = pq_decode(codec, codes.code(i));
    REQUIRE(squared_l2(dec, d.row(i)) == 0.0);
  }
}

TEST_CASE("pqcodec: encode recovers codeword concatenations", "[pqcodec]") {
  const auto d = test::random_dataset(300, 6, 9);
  const auto codec = pq_fit(d, {.num_segments = 3, .seg_k = 10, .kmeans_iters = 8, .seed = 1});
  const std::vector<std::uint8_t> code{7, 0, 9};
  const auto v = pq_decode(codec, code);
  VectorDataset one(6, 1, v);
  const auto enc = pq_encode(codec, one);
  REQUIRE(enc.codes == code);

  const auto table = adc_table(codec, v);
  REQUIRE(adc_distance(table, code) == 0.0);
  for (std::size_t s = 0; s < 3; ++s) REQUIRE(table.at(s, code[s]) == 0.0);

  REQUIRE(pq_encode(codec, VectorDataset(6, 0)).codes.empty());
  REQUIRE_THROWS_AS(pq_encode(codec, test::random_dataset(2, 5, 1)), ParameterError);
}

TEST_CASE("pqcodec: reconstruction error is the sum of segment distortions", "[pqcodec]") {
  const auto d = test::random_dataset(400, 8, 11);
  const auto codec = pq_fit(d, {.num_segments = 4, .seg_k = 8, .kmeans_iters = 10, .seed = 3});
  const auto codes = pq_encode(codec, d);
  for (std::size_t i = 0; i < d.count; ++i) {
    const auto dec = pq_decode(codec, codes.code(i));
    double seg_sum = 0.0;
    for (std::size_t s = 0; s < 4; ++s) {
      const auto sub = d.row(i).subspan(s * 2, 2);
      seg_sum += assign_with_distance(codec.segment_codebooks[s], sub).second;
    }
    REQUIRE(squared_l2(dec, d.row(i)) == Approx(seg_sum).epsilon(1e-9).margin(1e-12));
  }
}

TEST_CASE("pqcodec: ADC table entries are direct distances", "[pqcodec]") {
  const auto d = test::random_dataset(300, 8, 5);
  const auto codec = pq_fit(d, {.num_segments = 2, .seg_k = 16, .kmeans_iters = 5, .seed = 1});
  Rng rng(4);
  const auto q = test::random_vector(8, rng);
  const auto table = adc_table(codec, q);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t j = 0; j < 16; ++j) {
      const auto sub = std::span<const float>(q).subspan(s * 4, 4);
      REQUIRE(table.at(s, j) == squared_l2(sub, codec.segment_codebooks[s].centroid(j)));
      REQUIRE(table.at(s, j) >= 0.0);
    }
  // Per-segment minima bound every code from below.
  double bound = 0.0;
  for (std::size_t s = 0; s < 2; ++s)
    bound += *std::min_element(table.values.begin() + s * 16, table.values.begin() + (s + 1) * 16);
  for (std::uint32_t a = 0; a < 16; ++a)
    for (std::uint32_t b = 0; b < 16; ++b) {
      const std::vector<std::uint8_t> code{std::uint8_t(a), std::uint8_t(b)};
      REQUIRE(bound <= adc_distance(table, code));
    }
}

TEST_CASE("pqcodec: ADC matches decode-then-distance", "[pqcodec]") {
  const auto d = gen_synthetic(16, 200, 32, 0.2, 7);
  const auto codec = pq_fit(d, {.num_segments = 8, .seg_k = 64, .kmeans_iters = 8, .seed = 2});
  Rng rng(9);
  for (int t = 0; t < 2000; ++t) {
    const auto q = test::random_vector(32, rng, -0.5, 1.5);
    std::vector<std::uint8_t> code(8);
    for (auto& b : code) b = static_cast<std::uint8_t>(uniform_index(rng, 64));
    const double adc = adc_distance(adc_table(codec, q), code);
    const double direct = squared_l2(q, pq_decode(codec, code));
    REQUIRE(adc == Approx(direct).epsilon(1e-6).margin(1e-12));
  }
}

TEST_CASE("pqcodec: zero table and corrupted bytes", "[pqcodec]") {
  AdcTable zero{2, 4, std::vector<double>(8, 0.0)};
  const std::vector<std::uint8_t> code{3, 1};
  REQUIRE(adc_distance(zero, code) == 0.0);
  const std::vector<std::uint8_t> bad{4, 1};
  REQUIRE_THROWS_AS(adc_distance(zero, bad), FormatError);
}

TEST_CASE("pqcodec: parameter errors", "[pqcodec]") {
  const auto d = test::random_dataset(100, 6, 1);
  REQUIRE_THROWS_AS(pq_fit(d, {.num_segments = 4, .seg_k = 8}), ParameterError);
  REQUIRE_THROWS_AS(pq_fit(d, {.num_segments = 2, .seg_k = 300}), ParameterError);
  REQUIRE_THROWS_AS(pq_fit(d, {.num_segments = 2, .seg_k = 101}), ParameterError);
}

TEST_CASE("pqcodec: file round trips and validation", "[pqcodec]") {
  test::TempDir dir("pq");
  const auto d = test::random_dataset(200, 4, 1);
  const auto codec = pq_fit(d, {.num_segments = 2, .seg_k = 8, .kmeans_iters = 5, .seed = 1});
  const auto codes = pq_encode(codec, d);
  save_pq_codec(codec, dir / "c.bin");
  save_pq_codes(codes, dir / "k.bin");
  REQUIRE(load_pq_codec(dir / "c.bin") == codec);
  REQUIRE(load_pq_codes(dir / "k.bin") == codes);
  REQUIRE_NOTHROW(validate_codes(codec, codes));

  auto broken = codes;
  broken.codes[5] = 200;
  REQUIRE_THROWS_AS(validate_codes(codec, broken), FormatError);

  auto bytes = binio::read_file(dir / "k.bin");
  bytes.pop_back();
  test::write_bytes(dir / "short.bin", bytes);
  REQUIRE_THROWS_AS(load_pq_codes(dir / "short.bin"), FormatError);
}
