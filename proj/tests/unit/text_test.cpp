#include <gtest/gtest.h>

#include <chrono>

#include "hpcrag/error.hpp"
#include "hpcrag/text.hpp"

using namespace hpcrag;

TEST(Utf8, ValidAndInvalidSequences) {
  EXPECT_TRUE(is_valid_utf8("plain ascii"));
  EXPECT_TRUE(is_valid_utf8("caf\xc3\xa9 \xe2\x82\xac \xf0\x9f\x98\x80"));
  EXPECT_FALSE(is_valid_utf8("\xff"));
  EXPECT_FALSE(is_valid_utf8("\xc3"));           // truncated
  EXPECT_FALSE(is_valid_utf8("\xc0\xaf"));       // overlong
  EXPECT_FALSE(is_valid_utf8("\xed\xa0\x80"));   // surrogate
  EXPECT_FALSE(is_valid_utf8("\xf4\x90\x80\x80"));  // above U+10FFFF
}

TEST(Utf8, SanitizeReplacesEachBadByteAndKeepsLength) {
  bool replaced = false;
  const std::string in = "ok\xff\xfe done \xc3\xa9";
  const std::string out = sanitize_utf8(in, &replaced);
  EXPECT_TRUE(replaced);
  EXPECT_EQ(out, "ok?? done \xc3\xa9");
  EXPECT_EQ(out.size(), in.size());
  EXPECT_TRUE(is_valid_utf8(out));

  sanitize_utf8("clean", &replaced);
  EXPECT_FALSE(replaced);
}

TEST(Utf8, CodePointOffsets) {
  const std::string s = "a\xc3\xa9\xe2\x82\xac";
  const auto off = code_point_offsets(s);
  EXPECT_EQ(off, (std::vector<std::size_t>{0, 1, 3, 6}));
  EXPECT_EQ(code_point_count(s), 3u);
  EXPECT_EQ(code_point_offsets(""), (std::vector<std::size_t>{0}));
}

TEST(Tokenize, LowercasesAndTrimsEdgePunctuation) {
  EXPECT_EQ(tokenize("What GPUs are free, right now?"),
            (std::vector<std::string>{"what", "gpus", "are", "free", "right", "now"}));
  EXPECT_EQ(tokenize("  --gres=gpu:2  (sbatch) "), (std::vector<std::string>{"gres=gpu:2", "sbatch"}));
  EXPECT_TRUE(tokenize("  ... !! ").empty());
  EXPECT_TRUE(tokenize("").empty());
}

TEST(Strings, TrimLowerPrefix) {
  EXPECT_EQ(trim("  x y \n"), "x y");
  EXPECT_EQ(to_lower_ascii("AbC\xc3\x89"), "abc\xc3\x89");
  EXPECT_TRUE(starts_with_icase("Question: why", "question:"));
  EXPECT_FALSE(starts_with_icase("Q", "question"));
  EXPECT_EQ(replace_all("a-b-c", "-", "+"), "a+b+c");
}

TEST(Digest, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Timestamp, Iso8601Utc) {
  using namespace std::chrono;
  const system_clock::time_point tp{milliseconds{1700000000123}};
  EXPECT_EQ(iso_timestamp(tp), "2023-11-14T22:13:20.123Z");
}

TEST(ErrorType, MessageCarriesCodeName) {
  const Error e(ErrorCode::kMissingArtifact, "pairs.jsonl");
  EXPECT_EQ(e.code(), ErrorCode::kMissingArtifact);
  EXPECT_STREQ(e.what(), "MissingArtifact: pairs.jsonl");
}
