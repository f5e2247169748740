#include <gtest/gtest.h>

#include <sstream>

#include "ship/corpus.hpp"

using namespace ship;
using namespace ship::corpus;

namespace {

const CorpusSplit& default_split() {
  static const CorpusSplit split = build_split(enumerate_tasks(), 64, 7);
  return split;
}

CorpusConfig only(Family f) {
  CorpusConfig c;
  c.families = {f};
  return c;
}

}  // namespace

TEST(Corpus, ShiftOnlyGivesFifteenTasks) { EXPECT_EQ(enumerate_tasks(only(Family::shift)).size(), 15u); }

TEST(Corpus, ReverseIsParameterless) { EXPECT_EQ(enumerate_tasks(only(Family::reverse)).size(), 1u); }

TEST(Corpus, DefaultCatalogueSize) {
  // 1 + 15 + 33 + 1 + 1 + 1 + 1 + 7
  EXPECT_EQ(enumerate_tasks().size(), 60u);
}

TEST(Corpus, SmallAlphabetRejected) {
  CorpusConfig c;
  c.alphabet_size = 4;
  EXPECT_THROW(enumerate_tasks(c), CorpusError);
}

TEST(Corpus, TooFewTasksRejectedBySplit) {
  EXPECT_THROW(build_split(enumerate_tasks(only(Family::shift)), 64, 1), CorpusError);
}

TEST(Corpus, EnumerationDeterministicAndValid) {
  for (auto kind : {MapKind::transposition, MapKind::random}) {
    CorpusConfig c;
    c.map_kind = kind;
    auto a = enumerate_tasks(c), b = enumerate_tasks(c);
    EXPECT_EQ(a, b);
    for (const auto& p : a) {
      if (p.family == Family::shift) {
        EXPECT_GE(p.n, 1);
        EXPECT_LE(p.n, 15);
      }
      if (p.family == Family::map) {
        auto s = p.perm;
        std::sort(s.begin(), s.end());
        for (int i = 0; i < 16; ++i) EXPECT_EQ(s[static_cast<std::size_t>(i)], i);
        EXPECT_FALSE(is_rotation(p.perm));
      }
    }
  }
}

TEST(Corpus, ExecuteExamples) {
  EXPECT_EQ(execute({Family::reverse, 0, {}}, "abc", 16), "cba");
  EXPECT_EQ(execute({Family::shift, 1, {}}, "ap", 16), "ba");
  // Needs letters beyond p, so a full alphabet.
  EXPECT_EQ(execute({Family::duplicate, 0, {}}, "xy", 26), "xyxy");
  EXPECT_EQ(execute({Family::drop_first, 0, {}}, "abc", 16), "bc");
  EXPECT_EQ(execute({Family::sort, 0, {}}, "cab", 16), "abc");
  EXPECT_EQ(execute({Family::swap_case, 0, {}}, "abp", 16), "ABP");
  EXPECT_EQ(execute({Family::take_last, 2, {}}, "abcd", 16), "cd");
}

TEST(Corpus, ExecuteNamesInvalidPosition) {
  try {
    execute({Family::reverse, 0, {}}, "abz", 16);
    FAIL();
  } catch (const CorpusError& e) {
    EXPECT_NE(std::string(e.what()).find("position 2"), std::string::npos);
  }
}

TEST(Corpus, RenderExamples) {
  EXPECT_EQ(render_instruction({Family::reverse, 0, {}}, 0).str(), "reverse the input sequence");
  EXPECT_EQ(render_instruction({Family::shift, 2, {}}, 1).str(), "shift every letter forward by 2");
  EXPECT_THROW(render_instruction({Family::reverse, 0, {}}, 3), CorpusError);
}

TEST(Corpus, ParseExamples) {
  auto r = parse_instruction(split_tokens("reverse the input sequence"));
  ASSERT_TRUE(r);
  EXPECT_EQ(r.program->family, Family::reverse);
  auto bad = parse_instruction(split_tokens("flip all bits"));
  EXPECT_FALSE(bad);
  EXPECT_FALSE(bad.failure.empty());
  EXPECT_FALSE(parse_instruction(split_tokens("shift each letter by 16")));
  EXPECT_FALSE(parse_instruction(split_tokens("shift each letter by 0")));
  EXPECT_FALSE(parse_instruction({}));
}

TEST(Corpus, GrammarRoundTripExhaustive) {
  const auto tasks = enumerate_tasks();
  for (const auto& p : tasks)
    for (int t = 0; t < kTemplatesPerFamily; ++t) {
      auto ins = render_instruction(p, t);
      EXPECT_LE(static_cast<int>(ins.text.size()), CorpusConfig{}.max_instruction_len);
      auto r = parse_instruction(ins.text);
      ASSERT_TRUE(r) << ins.str();
      EXPECT_EQ(*r.program, p) << ins.str();
      EXPECT_EQ(r.template_id, t);
    }
}

TEST(Corpus, TasksBehaviorallyDistinct) {
  const auto tasks = enumerate_tasks();
  Rng rng(2024);
  std::vector<Sequence> probes;
  for (int i = 0; i < 200; ++i) probes.push_back(random_input(rng, 16));
  for (std::size_t a = 0; a < tasks.size(); ++a)
    for (std::size_t b = a + 1; b < tasks.size(); ++b) {
      bool differ = false;
      for (const auto& x : probes)
        if (execute(tasks[a], x, 16) != execute(tasks[b], x, 16)) {
          differ = true;
          break;
        }
      EXPECT_TRUE(differ) << tasks[a].canonical() << " vs " << tasks[b].canonical();
    }
}

TEST(Corpus, TaskIdsStableAndUnique) {
  std::set<std::string> ids;
  for (const auto& p : enumerate_tasks()) ids.insert(p.task_id());
  EXPECT_EQ(ids.size(), 60u);
  EXPECT_EQ(TaskProgram({Family::shift, 3, {}}).task_id(), TaskProgram({Family::shift, 3, {}}).task_id());
  EXPECT_NE(TaskProgram({Family::shift, 3, {}}).task_id(), TaskProgram({Family::shift, 4, {}}).task_id());
}

TEST(Corpus, SplitShape) {
  const auto& s = default_split();
  EXPECT_EQ(s.seen_tasks().size(), 54u);
  EXPECT_EQ(s.unseen_tasks().size(), 6u);
  for (const auto& t : s.tasks) {
    EXPECT_EQ(t.test.size(), 5u);
    EXPECT_EQ(t.train.size(), t.split == SplitTag::seen ? 64u : 0u);
    EXPECT_GT(family_size(enumerate_tasks(), t.program.family), t.split == SplitTag::unseen ? 1u : 0u);
    std::set<Sequence> xs;
    for (const auto* part : {&t.train, &t.test})
      for (const auto& ex : *part) {
        EXPECT_EQ(execute(t.program, ex.instance.x, 16), ex.instance.y);
        EXPECT_GE(ex.instance.x.size(), 3u);
        EXPECT_LE(ex.instance.x.size(), 8u);
        EXPECT_FALSE(ex.instance.y.empty());
        EXPECT_TRUE(xs.insert(ex.instance.x).second);
        EXPECT_EQ(*parse_instruction(ex.instruction.text).program, t.program);
      }
  }
}

TEST(Corpus, SplitDeterministic) {
  EXPECT_EQ(build_split(enumerate_tasks(), 64, 7), default_split());
  EXPECT_NE(corpus_hash(build_split(enumerate_tasks(), 64, 8)), corpus_hash(default_split()));
}

TEST(Corpus, SerializationRoundTrip) {
  std::istringstream in(serialize(default_split()));
  EXPECT_EQ(deserialize(in), default_split());
}

TEST(Corpus, TruncatedFileReportsLastLine) {
  std::string text = serialize(default_split());
  const auto lines = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
  text.resize(text.size() - 20);
  std::istringstream in(text);
  try {
    deserialize(in);
    FAIL();
  } catch (const CorpusError& e) {
    EXPECT_NE(std::string(e.what()).find("line " + std::to_string(lines)), std::string::npos) << e.what();
  }
}

TEST(Corpus, PermutedFieldOrderParses) {
  const std::string line =
      R"({"y":"c b a","x":"a b c","template_id":0,"instruction_text":"reverse the input sequence",)"
      R"("role":"test","split_tag":"seen","params":[],"family":"REVERSE","task_id":")" +
      TaskProgram{Family::reverse, 0, {}}.task_id() + "\"}\n";
  std::istringstream in(line);
  auto s = deserialize(in);
  ASSERT_EQ(s.tasks.size(), 1u);
  EXPECT_EQ(s.tasks[0].test[0].instance.y, "cba");
}

TEST(Corpus, InconsistentRecordRejected) {
  const std::string line = R"({"task_id":")" + TaskProgram{Family::reverse, 0, {}}.task_id() +
                           R"(","family":"REVERSE","params":[],"split_tag":"seen","role":"test",)"
                           R"("instruction_text":"reverse the sequence","template_id":1,"x":"a b c","y":"a b c"})";
  std::istringstream in(line);
  EXPECT_THROW(deserialize(in), CorpusError);
}
