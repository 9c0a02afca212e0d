#include <algorithm>
#include <numeric>
#include <set>

#include "doctest.h"
#include "pulsemap/error.hpp"
#include "pulsemap/params.hpp"
#include "pulsemap/patch_embed.hpp"
#include "pulsemap/rng.hpp"

using namespace pulsemap;

namespace {

ImageTensor random_image(std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  ImageTensor img;
  img.height = img.width = size;
  img.values.resize(size * size * 3);
  for (double& v : img.values) v = rng.uniform();
  return img;
}

TransformerConfig small_config() {
  auto c = TransformerConfig::desk();
  c.d_model = 16;
  c.n_heads_enc = 2;
  return c;
}

}  // namespace

TEST_CASE("patchify") {
  SUBCASE("constant image gives all-zero rows") {
    ImageTensor img;
    img.height = img.width = 224;
    img.values.assign(224 * 224 * 3, 0.7);
    const auto g = patchify(img);
    CHECK(g.n_patches() == 196);
    CHECK(g.patches.cols() == 768);
    CHECK(g.patches.isZero(0.0));
  }
  SUBCASE("a lit top-left tile only touches row 0 before standardization") {
    ImageTensor img;
    img.height = img.width = 224;
    img.values.assign(224 * 224 * 3, 0.0);
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x)
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = 1.0;
    const auto g = extract_patches(img, 16);
    CHECK((g.patches.row(0).array() == 1.0).all());
    CHECK(g.patches.bottomRows(195).isZero(0.0));
  }
  SUBCASE("extract and assemble are inverse") {
    const auto img = random_image(224, 3);
    const auto back = assemble_patches(extract_patches(img, 16));
    CHECK(back.values == img.values);
  }
  SUBCASE("rows are standardized") {
    const auto g = patchify_any(random_image(32, 4), 8);
    for (Eigen::Index r = 0; r < g.patches.rows(); ++r) {
      CHECK(std::abs(g.patches.row(r).mean()) < 1e-12);
      CHECK(g.patches.row(r).squaredNorm() / double(g.patches.cols()) == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  SUBCASE("wrong shapes are rejected") {
    CHECK_THROWS_AS(patchify(random_image(32, 1)), DataError);
    CHECK_THROWS_AS(patchify_any(random_image(30, 1), 8), DataError);
  }
}

TEST_CASE("token embedding") {
  const auto cfg = small_config();
  const ParamStore params = init_params(cfg, 5);
  const auto grid = patchify_any(random_image(32, 9), 8);

  SUBCASE("zero patches and zero embeddings leave only CLS") {
    ParamStore p = zero_params(cfg);
    p.get("cls").setConstant(0.5);
    PatchGrid zero = grid;
    zero.patches.setZero();
    const auto seq = embed_tokens(zero, InputModality::Face, p);
    CHECK(seq.size() == 17);
    CHECK((seq.tokens.row(0).array() == 0.5).all());
    CHECK(seq.tokens.bottomRows(16).isZero(0.0));
  }

  SUBCASE("equal content in two cells differs by the positional embeddings") {
    PatchGrid g = grid;
    g.patches.row(6) = g.patches.row(1);  // cell (1,2) copies cell (0,1)
    const auto seq = embed_tokens(g, InputModality::Face, params);
    const RowVector expected = params.get("face.row_embed").row(1) - params.get("face.row_embed").row(0) +
                               params.get("face.col_embed").row(2) - params.get("face.col_embed").row(1);
    CHECK((seq.tokens.row(7) - seq.tokens.row(2) - expected).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(seq.position_ids[7] == GridPos{1, 2});
    CHECK(seq.position_ids[2] == GridPos{0, 1});
  }

  SUBCASE("face and biosensor embeddings differ by the modality vectors") {
    ParamStore p = params;
    p.get("bio.patch_proj.w") = p.get("face.patch_proj.w");
    p.get("bio.patch_proj.b") = p.get("face.patch_proj.b");
    p.get("bio.row_embed") = p.get("face.row_embed");
    p.get("bio.col_embed") = p.get("face.col_embed");
    const auto f = embed_tokens(grid, InputModality::Face, p);
    const auto b = embed_tokens(grid, InputModality::Biosensor, p);
    const RowVector diff = p.get("modality_embed").row(0) - p.get("modality_embed").row(1);
    for (Eigen::Index i = 1; i < f.tokens.rows(); ++i)
      CHECK((f.tokens.row(i) - b.tokens.row(i) - diff).cwiseAbs().maxCoeff() < 1e-14);
  }

  SUBCASE("linear in patch content without bias or position terms") {
    ParamStore p = params;
    for (const char* name : {"face.patch_proj.b", "face.row_embed", "face.col_embed", "modality_embed"})
      p.get(name).setZero();
    PatchGrid scaled = grid;
    scaled.patches *= -2.5;
    const auto a = embed_tokens(grid, InputModality::Face, p);
    const auto s = embed_tokens(scaled, InputModality::Face, p);
    CHECK((s.tokens.bottomRows(16) + 2.5 * a.tokens.bottomRows(16)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("mask planning") {
  SUBCASE("196 patches at 0.75 masks 147") {
    const auto plan = plan_mask(196, 0.75, 1);
    CHECK(plan.n_masked == 147);
    CHECK(plan.masked_indices.size() == 147);
    CHECK(plan.visible_indices().size() == 49);
  }
  SUBCASE("deterministic per seed") {
    CHECK(plan_mask(196, 0.75, 42).masked_indices == plan_mask(196, 0.75, 42).masked_indices);
    CHECK(plan_mask(196, 0.75, 42).masked_indices != plan_mask(196, 0.75, 43).masked_indices);
  }
  SUBCASE("masked and visible partition the grid") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto plan = plan_mask(16, 0.75, seed);
      std::set<std::size_t> all(plan.masked_indices.begin(), plan.masked_indices.end());
      const auto vis = plan.visible_indices();
      for (auto v : vis) CHECK(all.insert(v).second);
      CHECK(all.size() == 16);
      CHECK(*all.rbegin() == 15);
    }
  }
  SUBCASE("each index is masked about three times in four") {
    std::vector<int> hits(196, 0);
    const int trials = 10000;
    for (int s = 0; s < trials; ++s)
      for (auto i : plan_mask(196, 0.75, std::uint64_t(s)).masked_indices) ++hits[i];
    for (int h : hits) CHECK(std::abs(double(h) / trials - 0.75) <= 0.02);
  }
  SUBCASE("ratios outside (0, 1) are rejected") {
    CHECK_THROWS_AS(plan_mask(16, 1.5, 0), ConfigError);
    CHECK_THROWS_AS(plan_mask(16, 0.0, 0), ConfigError);
  }
}

TEST_CASE("applying a mask") {
  TokenSequence seq;
  seq.tokens.resize(197, 4);
  for (Eigen::Index i = 0; i < 197; ++i) seq.tokens.row(i).setConstant(double(i));
  seq.position_ids.push_back({});
  for (int i = 0; i < 196; ++i) seq.position_ids.push_back({i / 14, i % 14});

  SUBCASE("empty plan keeps everything") {
    const auto out = apply_mask(seq, make_plan(196, {}));
    CHECK(out.tokens == seq.tokens);
    CHECK(out.position_ids == seq.position_ids);
  }
  SUBCASE("masking every patch leaves CLS") {
    std::vector<std::size_t> all(196);
    std::iota(all.begin(), all.end(), 0);
    const auto out = apply_mask(seq, make_plan(196, all));
    CHECK(out.size() == 1);
    CHECK(out.tokens(0, 0) == 0.0);
  }
  SUBCASE("147 masked leaves 49 patches plus CLS in grid order") {
    const auto plan = plan_mask(196, 0.75, 3);
    const auto out = apply_mask(seq, plan);
    REQUIRE(out.size() == 50);
    const auto vis = plan.visible_indices();
    for (std::size_t k = 0; k < vis.size(); ++k) {
      CHECK(out.tokens(Eigen::Index(k + 1), 0) == double(vis[k] + 1));
      CHECK(out.position_ids[k + 1] == seq.position_ids[vis[k] + 1]);
    }
  }
  SUBCASE("a plan for another grid size is rejected") {
    CHECK_THROWS_AS(apply_mask(seq, make_plan(16, {1})), DataError);
  }
}
