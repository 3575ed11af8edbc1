#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "hpcrag/error.hpp"
#include "hpcrag/offline_backends.hpp"
#include "hpcrag/retrieval.hpp"
#include "support/helpers.hpp"

using namespace hpcrag;

namespace {

Chunk make_chunk(std::string id, std::string text, ChunkKind kind = ChunkKind::kDocumentation) {
  Chunk c;
  c.id = id;
  c.doc_id = id;
  c.text = std::move(text);
  c.kind = kind;
  return c;
}

std::vector<double> unit(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  const double n = std::sqrt(s);
  std::vector<double> out(v);
  for (double& x : out) x /= n;
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Full sort of every entry; no partial selection.
std::vector<std::pair<std::string, double>> brute_force(const std::vector<std::pair<std::string, std::vector<double>>>& rows,
                                                        const std::vector<double>& q, std::size_t k) {
  const auto qu = unit(q);
  std::vector<std::pair<std::string, double>> all;
  for (const auto& [id, v] : rows) all.emplace_back(id, std::clamp(dot(unit(v), qu), -1.0, 1.0));
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

}  // namespace

TEST(Cosine, AnalyticValues) {
  EXPECT_DOUBLE_EQ(cosine(EmbeddingVector{{1, 0}}, EmbeddingVector{{0, 1}}), 0.0);
  EXPECT_DOUBLE_EQ(cosine(EmbeddingVector{{1, 0}}, EmbeddingVector{{0.6, 0.8}}), 0.6);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    EmbeddingVector v{{n(rng), n(rng), n(rng), n(rng)}};
    EXPECT_NEAR(cosine(v, v), 1.0, 1e-15);
    EXPECT_LE(cosine(v, v), 1.0);
  }
}

TEST(Cosine, Errors) {
  try {
    cosine(EmbeddingVector{{1, 0}}, EmbeddingVector{{1, 0, 0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
  try {
    cosine(EmbeddingVector{{0, 0}}, EmbeddingVector{{1, 0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kZeroVector);
  }
}

TEST(VectorIndexTest, InsertRules) {
  VectorIndex idx;
  idx.add("a", ChunkKind::kDocumentation, EmbeddingVector{{3, 4}});
  EXPECT_EQ(idx.dim(), 2u);
  EXPECT_DOUBLE_EQ(idx.vector(0)[0], 0.6);
  EXPECT_THROW(idx.add("a", ChunkKind::kDocumentation, EmbeddingVector{{1, 0}}), Error);
  EXPECT_THROW(idx.add("b", ChunkKind::kDocumentation, EmbeddingVector{{1, 0, 0}}), Error);
  EXPECT_THROW(idx.add("c", ChunkKind::kDocumentation, EmbeddingVector{{0, 0}}), Error);
  EXPECT_THROW(idx.add_unit("d", ChunkKind::kDocumentation, {2, 0}), Error);
  idx.add("e", ChunkKind::kCommand, EmbeddingVector{{0, 1}});
  const auto docs = idx.without_kind(ChunkKind::kCommand);
  EXPECT_EQ(docs.size(), 1u);
  EXPECT_FALSE(docs.contains("e"));
}

TEST(BuildIndex, OneEntryPerChunkAndErrors) {
  auto s = testutil::offline_stack({});
  std::vector<Chunk> chunks;
  for (int i = 0; i < 5; ++i) chunks.push_back(make_chunk("c" + std::to_string(i), "text " + std::to_string(i)));
  const auto idx = build_index(chunks, *s.gateway);
  EXPECT_EQ(idx.size(), 5u);
  EXPECT_EQ(idx.dim(), 256u);
  EXPECT_THROW(build_index(std::vector<Chunk>{}, *s.gateway), Error);
  chunks.push_back(make_chunk("c0", "dup"));
  try {
    build_index(chunks, *s.gateway);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDuplicateId);
  }
}

TEST(RetrieveTopK, ExactTextRanksFirstWithScoreOne) {
  auto s = testutil::offline_stack({});
  std::vector<Chunk> chunks = {make_chunk("a", "scratch purge policy"), make_chunk("b", "gpu partition limits"),
                               make_chunk("c", "module load python")};
  const auto idx = build_index(chunks, *s.gateway);
  const auto top = retrieve_topk("gpu partition limits", idx, 20, *s.gateway);
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].chunk_id, "b");
  EXPECT_DOUBLE_EQ(top[0].bi_score, 1.0);
  EXPECT_FALSE(top[0].rerank_score.has_value());
}

TEST(RetrieveTopK, MatchesBruteForceOnRandomVectors) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  const std::size_t dim = 16;
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  VectorIndex idx;
  for (int i = 0; i < 300; ++i) {
    std::vector<double> v(dim);
    for (auto& x : v) x = n(rng);
    // duplicate some vectors to force exact ties
    if (i % 17 == 0 && !rows.empty()) v = rows.back().second;
    char id[16];
    std::snprintf(id, sizeof id, "k%03d", (i * 37) % 300);
    rows.emplace_back(id, v);
    idx.add(id, ChunkKind::kDocumentation, EmbeddingVector{v});
  }
  for (int t = 0; t < 100; ++t) {
    std::vector<double> q(dim);
    for (auto& x : q) x = n(rng);
    if (t % 10 == 0) q = rows[t].second;
    const std::size_t k = 1 + rng() % 40;
    const auto got = retrieve_topk(EmbeddingVector{q}, idx, k);
    const auto want = brute_force(rows, q, k);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].chunk_id, want[i].first);
      EXPECT_EQ(got[i].bi_score, want[i].second);
    }
  }
}

TEST(RetrieveTopK, KLargerThanIndexReturnsAllSorted) {
  VectorIndex idx;
  idx.add("b", ChunkKind::kDocumentation, EmbeddingVector{{1, 0}});
  idx.add("a", ChunkKind::kDocumentation, EmbeddingVector{{1, 0}});
  idx.add("c", ChunkKind::kDocumentation, EmbeddingVector{{0, 1}});
  const auto top = retrieve_topk(EmbeddingVector{{1, 0.1}}, idx, 10);
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].chunk_id, "a");
  EXPECT_EQ(top[1].chunk_id, "b");
  EXPECT_EQ(top[2].chunk_id, "c");
  EXPECT_THROW(retrieve_topk(EmbeddingVector{{1, 0}}, VectorIndex{}, 3), Error);
  EXPECT_THROW(retrieve_topk(EmbeddingVector{{1, 0, 0}}, idx, 3), Error);
}

TEST(RetrieveTopK, ReservedCommandSlot) {
  VectorIndex idx;
  idx.add("d1", ChunkKind::kDocumentation, EmbeddingVector{{1, 0, 0}});
  idx.add("d2", ChunkKind::kDocumentation, EmbeddingVector{{1, 0.1, 0}});
  idx.add("cmd:x", ChunkKind::kCommand, EmbeddingVector{{0, 0, 1}});
  const EmbeddingVector q{{1, 0, 0.01}};
  const auto plain = retrieve_topk(q, idx, 2);
  EXPECT_EQ(plain[1].chunk_id, "d2");
  const auto reserved = retrieve_topk(q, idx, 2, RetrieveOptions{true});
  EXPECT_EQ(reserved[0].chunk_id, "d1");
  EXPECT_EQ(reserved[1].chunk_id, "cmd:x");
}

TEST(RetrieveTopK, GpuQueryFindsCommandDescription) {
  HashEmbeddingBackend emb;
  auto s = testutil::offline_stack({});
  std::vector<Chunk> chunks = {make_chunk("docs/gpu_policy.md#0", "GPU quota policy"),
                               make_chunk("cmd:gpu_availability", "show current GPU availability", ChunkKind::kCommand)};
  const auto idx = build_index(chunks, *s.gateway);
  const std::string query = "what GPUs are free right now";
  const auto top = retrieve_topk(query, idx, 2, *s.gateway);
  ASSERT_EQ(top.size(), 2u);
  EXPECT_EQ(top[0].chunk_id, "cmd:gpu_availability");

  // The ordering agrees with cosines computed directly from the hash embedding.
  const double c_cmd = cosine(emb.embed_one(query), emb.embed_one(chunks[1].text));
  const double c_doc = cosine(emb.embed_one(query), emb.embed_one(chunks[0].text));
  EXPECT_EQ(top[0].bi_score, c_cmd);
  EXPECT_EQ(top[1].bi_score, c_doc);
  EXPECT_TRUE(c_cmd > c_doc || (c_cmd == c_doc && chunks[1].id < chunks[0].id));
}

TEST(Rerank, OrdersByOverlapThenId) {
  auto s = testutil::offline_stack({});
  ChunkTable table({make_chunk("a", "check the job queue"), make_chunk("b", "storage quota"),
                    make_chunk("c", "queue length")});
  std::vector<ScoredChunk> cands = {{"b", ChunkKind::kDocumentation, 0.9, {}},
                                    {"a", ChunkKind::kDocumentation, 0.5, {}},
                                    {"c", ChunkKind::kDocumentation, 0.7, {}}};
  const auto out = rerank_candidates("check job queue", cands, 3, *s.gateway, table);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].chunk_id, "a");
  EXPECT_EQ(*out[0].rerank_score, 3.0);
  EXPECT_EQ(out[0].bi_score, 0.5);
  EXPECT_EQ(out[1].chunk_id, "c");
  EXPECT_EQ(out[2].chunk_id, "b");
  EXPECT_EQ(rerank_candidates("check job queue", cands, 1, *s.gateway, table).size(), 1u);
}

TEST(Rerank, SingleCandidateKeepsScores) {
  auto s = testutil::offline_stack({});
  ChunkTable table({make_chunk("a", "x y")});
  std::vector<ScoredChunk> cands = {{"a", ChunkKind::kDocumentation, 0.25, {}}};
  const auto out = rerank_candidates("y", cands, 5, *s.gateway, table);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].bi_score, 0.25);
  EXPECT_EQ(*out[0].rerank_score, 1.0);
}

namespace {
class ScaledReranker : public RerankBackend {
 public:
  explicit ScaledReranker(bool transform) : transform_(transform) {}
  std::string model_id() const override { return "scaled"; }
  std::vector<double> score(std::string_view q, std::span<const std::string> ps) const override {
    std::vector<double> out;
    for (const auto& p : ps) {
      const double s = token_overlap(q, p);
      out.push_back(transform_ ? std::exp(s) * 3.0 - 7.0 : s);
    }
    return out;
  }

 private:
  bool transform_;
};
}  // namespace

TEST(Rerank, MonotoneTransformInvariance) {
  std::mt19937_64 rng(3);
  const std::vector<std::string> vocab = {"gpu", "job", "queue", "node", "scratch", "quota", "module"};
  std::vector<Chunk> chunks;
  std::vector<ScoredChunk> cands;
  for (int i = 0; i < 30; ++i) {
    std::string text;
    for (int w = 0; w < 4; ++w) text += vocab[rng() % vocab.size()] + " ";
    chunks.push_back(make_chunk("c" + std::to_string(i), text));
    cands.push_back({"c" + std::to_string(i), ChunkKind::kDocumentation, 0.0, {}});
  }
  ChunkTable table(chunks);
  auto emb = std::make_shared<HashEmbeddingBackend>();
  ModelGateway plain(emb, std::make_shared<ScaledReranker>(false), nullptr);
  ModelGateway scaled(emb, std::make_shared<ScaledReranker>(true), nullptr);
  const auto a = rerank_candidates("gpu job queue", cands, 10, plain, table);
  const auto b = rerank_candidates("gpu job queue", cands, 10, scaled, table);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].chunk_id, b[i].chunk_id);
}

TEST(IndexFile, RoundTripIsBitExact) {
  testutil::TempDir dir;
  auto s = testutil::offline_stack({});
  std::vector<Chunk> chunks = {make_chunk("a", "alpha beta"), make_chunk("cmd:x", "gamma", ChunkKind::kCommand)};
  const auto idx = build_index(chunks, *s.gateway);
  save_index(idx, dir / "i.json");
  const auto back = load_index(dir / "i.json", ChunkTable(chunks));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.kind(1), ChunkKind::kCommand);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto x = idx.vector(i), y = back.vector(i);
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
  }
  EXPECT_THROW(load_index(dir / "i.json", ChunkTable({make_chunk("a", "alpha")})), Error);
  dir.write("bad.json", R"({"schema_version": 9, "dim": 2, "entries": []})");
  EXPECT_THROW(load_index(dir / "bad.json", ChunkTable(chunks)), Error);
}
