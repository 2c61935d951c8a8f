#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "t2l/taskgen.hpp"

using namespace t2l;

namespace {

std::vector<int> syms(std::initializer_list<int> v) { return v; }

std::set<std::vector<int>> prompts(const std::vector<Example>& ex) {
    std::set<std::vector<int>> s;
    for (const auto& e : ex) s.insert(e.prompt);
    return s;
}

}  // namespace

TEST(Rules, WorkedExamples) {
    EXPECT_EQ(apply_rule(make_spec(TaskKind::Copy), syms({0, 1, 2})), syms({0, 1, 2}));
    EXPECT_EQ(apply_rule(make_spec(TaskKind::Reverse), syms({0, 1, 2})), syms({2, 1, 0}));
    EXPECT_EQ(apply_rule(make_spec(TaskKind::ModAdd, 5), syms({3, 4})), syms({2}));
    EXPECT_EQ(apply_rule(make_spec(TaskKind::Sort), syms({5, 1, 3})), syms({1, 3, 5}));
    EXPECT_EQ(apply_rule(make_spec(TaskKind::Shift, 3), syms({14, 0})), syms({1, 3}));
    EXPECT_EQ(apply_rule(make_spec(TaskKind::Rotate, 1), syms({1, 2, 3})), syms({2, 3, 1}));
    EXPECT_EQ(apply_rule(make_spec(TaskKind::Filter, 2), syms({2, 1, 2, 4})), syms({1, 4}));
    EXPECT_EQ(apply_rule(make_spec(TaskKind::Repeat, 2), syms({1, 2})), syms({1, 1, 2, 2}));
    EXPECT_EQ(apply_rule(make_spec(TaskKind::CaseMap), syms({0, 9})), syms({8, 1}));
}

TEST(Ids, ParseAndErrors) {
    EXPECT_EQ(parse_task_id("shift_3"), make_spec(TaskKind::Shift, 3));
    EXPECT_EQ(parse_task_id("successor"), make_spec(TaskKind::Shift, 1));
    EXPECT_EQ(parse_task_id("modular_add_5").id(), "modular_add_5");
    EXPECT_EQ(parse_task_id("copy").id(), "copy");
    EXPECT_THROW(parse_task_id("translate"), ConfigError);
    EXPECT_THROW(parse_task_id("shift_9"), ConfigError);
    EXPECT_THROW(make_task("nope", 0, 4, 4, 1, 1), ConfigError);
    EXPECT_THROW(make_task("copy", 0, 0, 4, 1, 1), ConfigError);
}

TEST(MakeTask, EverySpecIsSolvableDisjointAndInVocabulary) {
    for (const auto& spec : all_task_specs()) {
        ToyTask t = make_task(spec, 40, 20, 4, 3);
        EXPECT_EQ(t.train.size(), 40u);
        EXPECT_EQ(t.test.size(), 20u);
        auto a = prompts(t.train), b = prompts(t.test);
        for (const auto& p : b) EXPECT_EQ(a.count(p), 0u) << t.id;
        for (const auto* split : {&t.train, &t.test})
            for (const auto& e : *split) {
                EXPECT_TRUE(check_example(spec, e)) << t.id;
                for (int tk : e.prompt) EXPECT_TRUE(tk >= 0 && tk < 64);
                for (int tk : e.completion) EXPECT_TRUE(tk >= 0 && tk < 64);
                EXPECT_LE(e.prompt.size() + e.completion.size(), 32u);
            }
        EXPECT_FALSE(t.descriptions.empty());
    }
}

TEST(MakeTask, DeterministicAndCapacityChecked) {
    ToyTask a = make_task("rotate", 2, 10, 5, 3, 9), b = make_task("rotate", 2, 10, 5, 3, 9);
    EXPECT_EQ(a.train.front().prompt, b.train.front().prompt);
    EXPECT_EQ(a.descriptions, b.descriptions);
    EXPECT_THROW(make_task("modular_add", 5, 100, 100, 1, 1), CapacityError);
}

TEST(Descriptions, SplitsAreDisjointAndReproducible) {
    for (const auto& spec : all_task_specs()) {
        auto tr = description_pool(spec, DescSplit::Train), ev = description_pool(spec, DescSplit::Eval);
        std::set<std::string> s(tr.begin(), tr.end());
        for (const auto& d : ev) EXPECT_EQ(s.count(d), 0u) << d;
        EXPECT_EQ(std::set<std::string>(tr.begin(), tr.end()).size(), tr.size());
    }
    const TaskSpec s = make_spec(TaskKind::Sort);
    EXPECT_EQ(description_variants(s, DescSplit::Train, 8, 4), description_variants(s, DescSplit::Train, 8, 4));
    const auto many = description_variants(s, DescSplit::Train, 12, 4);
    EXPECT_EQ(std::set<std::string>(many.begin(), many.end()).size(), 12u);
    EXPECT_THROW(description_variants(s, DescSplit::Eval, 1000, 1), CapacityError);
}

TEST(Descriptions, ParameterAppearsInText) {
    const auto d = description_pool(make_spec(TaskKind::Shift, 3), DescSplit::Train);
    for (const auto& x : d) EXPECT_NE(x.find("three"), std::string::npos) << x;
}

TEST(Descriptions, RandomControlArm) {
    auto a = random_descriptions(5, 1), b = random_descriptions(5, 1);
    EXPECT_EQ(a, b);
    for (const auto& s : a) EXPECT_FALSE(s.empty());
    EXPECT_NE(a, random_descriptions(5, 2));
}

TEST(Unaligned, NeverFromQueriedTaskAndDrawnFromTrainDescriptions) {
    SuiteConfig c;
    c.train_ids = {"copy", "reverse", "sort"};
    c.held_out_ids = {"shift_3"};
    c.n_train = 8;
    c.n_test = 4;
    TaskSuite s = make_suite(c, 5);
    std::set<std::string> all;
    for (const auto* v : {&s.train_tasks, &s.held_out})
        for (const auto& t : *v) all.insert(t.descriptions.begin(), t.descriptions.end());
    for (const auto* v : {&s.train_tasks, &s.held_out})
        for (const auto& t : *v) {
            const auto u = unaligned_descriptions(s, t.id, 10, 6);
            EXPECT_EQ(u, unaligned_descriptions(s, t.id, 10, 6));
            std::set<std::string> own(t.descriptions.begin(), t.descriptions.end());
            for (const auto& d : u) {
                EXPECT_EQ(own.count(d), 0u);
                EXPECT_EQ(all.count(d), 1u);
            }
        }
    TaskSuite single;
    single.train_tasks.push_back(s.train_tasks[0]);
    EXPECT_THROW(unaligned_descriptions(single, "copy", 1, 1), CapacityError);
}

TEST(Suite, DefaultsBuildAndKeepHeldOutUnseen) {
    SuiteConfig c;
    TaskSuite s = make_suite(c, 7);
    EXPECT_GE(s.train_tasks.size(), 8u);
    EXPECT_GE(s.held_out.size(), 2u);
    std::set<TaskKind> kinds;
    for (const auto& t : s.train_tasks) kinds.insert(t.spec.kind);
    bool unseen_kind = false;
    for (const auto& h : s.held_out) {
        for (const auto& t : s.train_tasks) EXPECT_NE(h.id, t.id);
        unseen_kind = unseen_kind || kinds.count(h.spec.kind) == 0;
    }
    EXPECT_TRUE(unseen_kind);
    for (const auto& t : s.train_tasks) EXPECT_GE(t.descriptions.size(), 8u);
    c.held_out_ids.push_back("copy");
    EXPECT_THROW(make_suite(c, 7), ConfigError);
}

TEST(Dump, RoundTripAndRejectsBadRecords) {
    std::vector<ToyTask> tasks{make_task("filter_token", 3, 6, 3, 2, 1), make_task("modular_add", 7, 6, 3, 2, 1)};
    std::stringstream ss;
    dump_tasks(tasks, ss);
    auto back = load_tasks(ss);
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].id, tasks[i].id);
        EXPECT_EQ(back[i].descriptions, tasks[i].descriptions);
        EXPECT_EQ(back[i].eval_descriptions, tasks[i].eval_descriptions);
        ASSERT_EQ(back[i].train.size(), tasks[i].train.size());
        EXPECT_EQ(back[i].test.back().completion, tasks[i].test.back().completion);
    }
    std::stringstream bad("task copy\ndescription copy it\ntrain 1 4 5 24 2 | 25 3\nend\n");
    EXPECT_THROW(load_tasks(bad), InputError);
    std::stringstream open_ended("task copy\ndescription copy it\n");
    EXPECT_THROW(load_tasks(open_ended), InputError);
}

TEST(Instructed, FillsOperatorTokens) {
    ToyTask t = make_task("shift", 2, 2, 1, 1, 1);
    Example e = instructed(t.spec, t.train[0]);
    EXPECT_EQ(e.prompt[1], op_token(TaskKind::Shift));
    EXPECT_EQ(e.prompt[2], tok::arg(2));
    EXPECT_EQ(t.train[0].prompt[1], tok::NULL_OP);
}
