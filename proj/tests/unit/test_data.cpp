#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "mmib/data.hpp"
#include "mmib/error.hpp"
#include "mmib/metrics.hpp"
#include "mmib/optimizer.hpp"
#include "mmib/tensor_file.hpp"

using namespace mmib;
using ad::Var;
using data::Example;
namespace fs = std::filesystem;

namespace {

class DataDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = mmib::testing::scratch_dir("data");
    io::write_tensor_file(Matrix(2, 3, 0.5), dir / "img.mmtf");
    io::write_tensor_file(Matrix(1, 3, 1.0), dir / "one.mmtf");
  }
  fs::path write(const std::string& name, const std::string& body) {
    std::ofstream(dir / name) << body;
    return dir / name;
  }
  fs::path dir;
};

std::vector<Example> parse(const std::string& text, const fs::path& base) {
  std::istringstream in(text);
  return data::parse_manifest(in, base);
}

std::string ner_line(const std::string& id, const std::string& tokens, const std::string& labels,
                     const std::string& image = "img.mmtf") {
  return R"({"id":")" + id + R"(","tokens":)" + tokens + R"(,"bio_labels":)" + labels + R"(,"image_ref":")" +
         image + "\"}\n";
}

std::vector<data::Instance> prepare_ner(const std::vector<Example>& ex, std::size_t max_len = 128,
                                        std::vector<std::string>* warnings = nullptr) {
  const std::vector<std::string> types{"PER", "LOC"};
  data::PrepareOptions o;
  o.max_len = max_len;
  o.d_img_raw = 3;
  auto p = data::prepare(ex, data::Vocab::build(ex), data::LabelSet::bio(types), o);
  if (warnings) *warnings = p.warnings;
  return p.instances;
}

}  // namespace

TEST_F(DataDir, ParsesNerLine) {
  const auto ex = parse(ner_line("a", R"(["Rob","is","cute"])", R"(["B-PER","O","O"])"), dir);
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].tokens.size(), 3u);
  EXPECT_EQ(ex[0].task(), data::Task::kMner);
  EXPECT_EQ(ex[0].image_ref, dir / "img.mmtf");
}

TEST_F(DataDir, RejectsOrphanInside) {
  EXPECT_THROW(parse(ner_line("a", R"(["Rob","is"])", R"(["I-PER","O"])"), dir), DataError);
}

TEST_F(DataDir, ParsesRelationLine) {
  const auto ex = parse(
      R"({"id":"r","tokens":["Rob","and","Ann"],"relation":"per/per/peer","head_span":[0,0],"tail_span":[2,2],"image_ref":"img.mmtf"})"
      "\n",
      dir);
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].task(), data::Task::kMre);
  EXPECT_EQ(ex[0].relation, "per/per/peer");
  EXPECT_EQ(ex[0].head_span, (data::Span{0, 0}));
  EXPECT_EQ(ex[0].tail_span, (data::Span{2, 2}));
}

TEST_F(DataDir, RejectsBadRelationSpans) {
  const std::string pre = R"({"id":"r","tokens":["a","b","c"],"relation":"x","image_ref":"img.mmtf",)";
  EXPECT_THROW(parse(pre + R"("head_span":[0,0],"tail_span":[0,0]})" "\n", dir), DataError);
  EXPECT_THROW(parse(pre + R"("head_span":[0,0],"tail_span":[2,3]})" "\n", dir), DataError);
  EXPECT_THROW(parse(pre + R"("head_span":[1,0],"tail_span":[2,2]})" "\n", dir), DataError);
}

TEST_F(DataDir, RejectsUnknownKeysAndMalformedJson) {
  EXPECT_THROW(parse(R"({"id":"a","tokens":["x"],"bio_labels":["O"],"image_ref":"i","extra":1})" "\n", dir),
               DataError);
  EXPECT_THROW(parse("{not json}\n", dir), DataError);
}

TEST_F(DataDir, CollectsEveryBadLineWithLineNumbersAndIds) {
  const std::string text = ner_line("good", R"(["a"])", R"(["O"])") +
                           ner_line("bad1", R"(["a","b"])", R"(["O","I-LOC"])") +
                           ner_line("bad2", R"(["a"])", R"(["O","O"])");
  try {
    parse(text, dir);
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 2"), std::string::npos);
    EXPECT_NE(msg.find("bad1"), std::string::npos);
    EXPECT_NE(msg.find("line 3"), std::string::npos);
    EXPECT_NE(msg.find("bad2"), std::string::npos);
    EXPECT_EQ(msg.find("good"), std::string::npos);
  }
}

TEST_F(DataDir, LoadManifestResolvesPathsAgainstManifestDirectory) {
  fs::create_directories(dir / "sub");
  io::write_tensor_file(Matrix(1, 3), dir / "sub" / "x.mmtf");
  const auto path = write("sub/m.jsonl", ner_line("a", R"(["x"])", R"(["O"])", "x.mmtf"));
  const auto ex = data::load_manifest(path);
  EXPECT_EQ(ex[0].image_ref, dir / "sub" / "x.mmtf");
  EXPECT_THROW(data::load_manifest(dir / "missing.jsonl"), DataError);
}

TEST(Bio, ValidatorMatchesDecoderOnRandomSpanSets) {
  std::mt19937_64 rng(5);
  const std::vector<std::string> types{"PER", "LOC", "ORG"};
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 10;
    std::vector<metrics::TypedSpan> spans;
    for (std::size_t i = 0; i < n;) {
      if (rng() % 3 == 0) {
        const std::size_t len = 1 + rng() % 3;
        const std::size_t end = std::min(n - 1, i + len - 1);
        spans.push_back({static_cast<int>(i), static_cast<int>(end), types[rng() % types.size()]});
        i = end + 1;
      } else {
        ++i;
      }
    }
    const auto labels = metrics::encode_bio(n, spans);
    EXPECT_TRUE(data::is_well_formed_bio(labels));
    EXPECT_EQ(metrics::decode_bio(labels), spans);
  }
  const std::vector<std::string> orphan{"O", "I-PER"}, switched{"B-PER", "I-LOC"};
  EXPECT_FALSE(data::is_well_formed_bio(orphan));
  EXPECT_FALSE(data::is_well_formed_bio(switched));
}

TEST(Vocab, SpecialsFirstThenFirstSeenOrder) {
  Example a, b;
  a.tokens = {"x", "y"};
  b.tokens = {"y", "z"};
  const std::vector<Example> ex{a, b};
  const auto v = data::Vocab::build(ex);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"[UNK]", "[CLS]", "[SEP]", "x", "y", "z"}));
  EXPECT_EQ(v.id("z"), 5);
  EXPECT_EQ(v.id("never"), data::Vocab::kUnk);
  const std::vector<std::string> types{"PER"};
  EXPECT_EQ(data::LabelSet::bio(types).names(), (std::vector<std::string>{"O", "B-PER", "I-PER"}));
}

TEST_F(DataDir, PrepareAddsClsSepWithOutsideLabel) {
  const auto ex = parse(ner_line("a", R"(["Rob","is","cute"])", R"(["B-PER","O","O"])"), dir);
  const auto inst = prepare_ner(ex);
  ASSERT_EQ(inst.size(), 1u);
  EXPECT_EQ(inst[0].token_ids, (std::vector<int>{1, 3, 4, 5, 2}));
  EXPECT_EQ(inst[0].label_ids, (std::vector<int>{0, 1, 0, 0, 0}));
  EXPECT_EQ(inst[0].image->rows(), 2u);
}

TEST_F(DataDir, TruncatesLongSentences) {
  std::string toks = "[", labs = "[";
  for (int i = 0; i < 130; ++i) {
    toks += std::string(i ? "," : "") + "\"t" + std::to_string(i) + "\"";
    labs += std::string(i ? "," : "") + (i == 3 ? "\"B-LOC\"" : "\"O\"");
  }
  const auto ex = parse(ner_line("long", toks + "]", labs + "]"), dir);
  const auto inst = prepare_ner(ex, 128);
  ASSERT_EQ(inst.size(), 1u);
  EXPECT_EQ(inst[0].tokens.size(), 128u);
  EXPECT_EQ(inst[0].token_ids.size(), 130u);
  EXPECT_EQ(inst[0].token_ids.back(), data::Vocab::kSep);
}

TEST_F(DataDir, SkipsExamplesWhoseEntityWouldBeCut) {
  const auto ex = parse(ner_line("cut", R"(["a","b","c"])", R"(["O","B-PER","I-PER"])") +
                            ner_line("ok", R"(["a","b","c"])", R"(["B-PER","O","O"])"),
                        dir);
  std::vector<std::string> warnings;
  const auto inst = prepare_ner(ex, 2, &warnings);
  ASSERT_EQ(inst.size(), 1u);
  EXPECT_EQ(inst[0].id, "ok");
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("cut"), std::string::npos);
}

TEST_F(DataDir, PrepareRejectsWrongImageWidth) {
  io::write_tensor_file(Matrix(1, 5), dir / "wide.mmtf");
  const auto ex = parse(ner_line("w", R"(["a"])", R"(["O"])", "wide.mmtf"), dir);
  EXPECT_THROW(prepare_ner(ex), DataError);
}

TEST_F(DataDir, BatchesAndShuffleAreDeterministic) {
  std::string text;
  for (int i = 0; i < 10; ++i) text += ner_line("e" + std::to_string(i), R"(["a","b"])", R"(["O","O"])");
  const auto inst = prepare_ner(parse(text, dir));
  const auto batches = data::make_batches(inst, 4, 99, 0);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].items.size(), 4u);
  EXPECT_EQ(batches[1].items.size(), 4u);
  EXPECT_EQ(batches[2].items.size(), 2u);
  EXPECT_EQ(data::epoch_order(10, 99, 0), data::epoch_order(10, 99, 0));
  EXPECT_NE(data::epoch_order(10, 99, 0), data::epoch_order(10, 99, 1));
  auto sorted = data::epoch_order(10, 99, 3);
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(sorted[i], i);
}

TEST_F(DataDir, PaddingIsMaskedAndZeroed) {
  const auto inst = prepare_ner(parse(ner_line("long", R"(["a","b","c"])", R"(["O","O","O"])") +
                                          ner_line("short", R"(["a"])", R"(["O"])", "one.mmtf"),
                                      dir));
  const data::Instance* ptrs[] = {&inst[0], &inst[1]};
  const auto b = data::make_batch(ptrs, 1, 2);
  EXPECT_EQ(b.text_len, 6u);
  EXPECT_EQ(b.image_len, 4u);
  const auto& s = b.items[1];
  EXPECT_EQ(s.text_mask, (ad::Mask{1, 1, 1, 0, 0, 0}));
  EXPECT_EQ(s.image_mask, (ad::Mask{1, 0, 0, 0}));
  EXPECT_EQ(s.token_ids[3], -1);
  EXPECT_EQ(s.label_ids[5], -1);
  EXPECT_EQ(s.text_valid(), 3u);
  EXPECT_EQ(s.image_valid(), 1u);
  for (std::size_t r = 1; r < 4; ++r)
    for (double v : s.image.row_span(r)) EXPECT_EQ(v, 0.0);
}

TEST(Embedding, ShapesAndIdenticalTokens) {
  const data::Vocab vocab(std::vector<std::string>{"a", "b"});
  std::mt19937_64 rng(1);
  ad::Tape t;
  Var table = t.constant(mmib::testing::random_matrix(vocab.size(), 8, rng));
  const std::vector<std::string> toks{"a", "b", "a"};
  const Matrix e = data::embed_text(table, toks, vocab).value();
  EXPECT_EQ(e.rows(), 5u);
  EXPECT_EQ(e.cols(), 8u);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(e(1, c), e(3, c));
  EXPECT_EQ(e(0, 0), table.value()(data::Vocab::kCls, 0));
  EXPECT_EQ(e(4, 0), table.value()(data::Vocab::kSep, 0));
}

TEST(Embedding, TrainStepMovesOnlyUsedRow) {
  const data::Vocab vocab(std::vector<std::string>{"a", "b", "c"});
  std::mt19937_64 rng(2);
  ad::ParameterStore store;
  auto& table = store.add("emb", mmib::testing::random_matrix(vocab.size(), 4, rng));
  const Matrix before = table.value;
  ad::Tape t;
  const std::vector<std::string> toks{"b"};
  Var row = ad::slice_rows(data::embed_text(t.leaf(table), toks, vocab), 1, 2);
  t.backward(ad::sum(row * row));
  optim::AdamWConfig oc;
  oc.learning_rate = 0.01;
  oc.weight_decay = 0.0;
  optim::AdamW(oc).step(store);
  const std::size_t used = static_cast<std::size_t>(vocab.id("b"));
  for (std::size_t r = 0; r < vocab.size(); ++r) {
    bool changed = false;
    for (std::size_t c = 0; c < 4; ++c) changed = changed || table.value(r, c) != before(r, c);
    EXPECT_EQ(changed, r == used) << "row " << r;
  }
}

TEST(ImageProjection, ShapesZeroWeightsAndWidthCheck) {
  std::mt19937_64 rng(3);
  ad::Tape t;
  Var raw = t.constant(mmib::testing::random_matrix(1, 6, rng));
  const Matrix out = data::project_images(raw, t.constant(Matrix(6, 4))).value();
  EXPECT_EQ(out, Matrix(1, 4));
  EXPECT_THROW(data::project_images(raw, t.constant(Matrix(5, 4))), ShapeError);
}

TEST(ImageProjection, GradientReachesProjection) {
  std::mt19937_64 rng(4);
  ad::ParameterStore store;
  auto& w = store.add("w_v", mmib::testing::random_matrix(6, 3, rng));
  const Matrix raw = mmib::testing::random_matrix(4, 6, rng);
  const auto r = mmib::testing::check_gradients(store, [&](ad::Tape& t) {
    Var x = data::project_images(t.constant(raw), t.leaf(w));
    return ad::sum(ad::sigmoid(x));
  });
  EXPECT_LE(r.max_rel_err, 1e-6) << r.worst;
}
