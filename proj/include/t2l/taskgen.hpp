#pragma once

// Synthetic sequence tasks with templated natural-language descriptions.
//
// Vocabulary (64 ids):
//   0 PAD  1 BOS  2 SEP  3 EOS  4 NULL_OP  5 NULL_ARG
//   6..15  operation tokens (one per TaskKind)
//   16..23 argument tokens (values 0..7)
//   24..39 symbols 0..15 (0..7 "lower case" a-h, 8..15 "upper case" A-H)
//
// A task prompt is  BOS NULL_OP NULL_ARG x1 .. xn SEP  and the completion is
// y1 .. ym EOS. The instructed form replaces the two NULL tokens with the
// operation and argument tokens; the base model is pretrained on instructed
// prompts only, so adapters have to supply the missing instruction.

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "t2l/base_lm.hpp"
#include "t2l/error.hpp"
#include "t2l/rng.hpp"

namespace t2l {

namespace tok {
inline constexpr int PAD = 0, BOS = 1, SEP = 2, EOS = 3, NULL_OP = 4, NULL_ARG = 5;
inline constexpr int kOpBase = 6, kArgBase = 16, kSymBase = 24;
inline constexpr int kNumSymbols = 16, kNumArgs = 8;
inline constexpr int sym(int i) { return kSymBase + i; }
inline constexpr int arg(int v) { return kArgBase + v; }
}  // namespace tok

enum class TaskKind { Copy, Reverse, Sort, CaseMap, Shift, Rotate, Filter, ModAdd, Repeat };

inline const std::vector<std::pair<TaskKind, std::string>>& task_kind_names() {
    static const std::vector<std::pair<TaskKind, std::string>> names{
        {TaskKind::Copy, "copy"},         {TaskKind::Reverse, "reverse"}, {TaskKind::Sort, "sort"},
        {TaskKind::CaseMap, "case_map"},  {TaskKind::Shift, "shift"},     {TaskKind::Rotate, "rotate"},
        {TaskKind::Filter, "filter_token"}, {TaskKind::ModAdd, "modular_add"}, {TaskKind::Repeat, "repeat"}};
    return names;
}

inline std::string kind_name(TaskKind k) {
    for (const auto& [kk, n] : task_kind_names())
        if (kk == k) return n;
    return "?";
}

inline TaskKind parse_kind(const std::string& s) {
    if (s == "successor") return TaskKind::Shift;
    for (const auto& [k, n] : task_kind_names())
        if (n == s) return k;
    throw ConfigError("unsupported task kind '" + s + "'");
}

inline int op_token(TaskKind k) { return tok::kOpBase + static_cast<int>(k); }

/// Valid parameter range of each kind.
inline std::pair<int, int> param_range(TaskKind k) {
    switch (k) {
        case TaskKind::Shift: return {1, 7};
        case TaskKind::Rotate: return {1, 5};
        case TaskKind::Filter: return {0, 7};
        case TaskKind::ModAdd: return {2, 7};
        case TaskKind::Repeat: return {2, 2};
        default: return {0, 0};
    }
}

struct TaskSpec {
    TaskKind kind = TaskKind::Copy;
    int param = 0;

    std::string id() const {
        auto [lo, hi] = param_range(kind);
        return lo == hi && lo == 0 ? kind_name(kind) : kind_name(kind) + "_" + std::to_string(param);
    }
    bool operator==(const TaskSpec&) const = default;
    auto operator<=>(const TaskSpec&) const = default;
};

inline TaskSpec make_spec(TaskKind kind, int param = -1) {
    auto [lo, hi] = param_range(kind);
    if (param < 0) param = lo;
    if (param < lo || param > hi)
        throw ConfigError(kind_name(kind) + ": parameter " + std::to_string(param) + " outside [" + std::to_string(lo) +
                          ", " + std::to_string(hi) + "]");
    return {kind, param};
}

/// Parses ids such as "copy", "shift_3", "successor", "modular_add_5".
inline TaskSpec parse_task_id(const std::string& id) {
    if (id == "successor") return make_spec(TaskKind::Shift, 1);
    const auto us = id.rfind('_');
    if (us != std::string::npos && us + 1 < id.size() &&
        std::all_of(id.begin() + static_cast<std::ptrdiff_t>(us + 1), id.end(), ::isdigit)) {
        return make_spec(parse_kind(id.substr(0, us)), std::stoi(id.substr(us + 1)));
    }
    return make_spec(parse_kind(id));
}

// ---------------------------------------------------------------------------
// Rules

/// Deterministic rule of a task over symbol indices (0..15).
inline std::vector<int> apply_rule(const TaskSpec& t, const std::vector<int>& x) {
    std::vector<int> y;
    const int n = static_cast<int>(x.size());
    switch (t.kind) {
        case TaskKind::Copy: return x;
        case TaskKind::Reverse: return {x.rbegin(), x.rend()};
        case TaskKind::Sort:
            y = x;
            std::sort(y.begin(), y.end());
            return y;
        case TaskKind::CaseMap:
            for (int s : x) y.push_back(s ^ 8);
            return y;
        case TaskKind::Shift:
            for (int s : x) y.push_back((s + t.param) % tok::kNumSymbols);
            return y;
        case TaskKind::Rotate:
            for (int i = 0; i < n; ++i) y.push_back(x[static_cast<std::size_t>((i + t.param) % n)]);
            return y;
        case TaskKind::Filter:
            for (int s : x)
                if (s != t.param) y.push_back(s);
            return y;
        case TaskKind::ModAdd:
            if (x.size() != 2) throw ShapeError("modular_add expects two operands");
            return {(x[0] + x[1]) % t.param};
        case TaskKind::Repeat:
            for (int s : x)
                for (int k = 0; k < t.param; ++k) y.push_back(s);
            return y;
    }
    return y;
}

inline std::vector<int> prompt_tokens(const std::vector<int>& x, int op = tok::NULL_OP, int arg = tok::NULL_ARG) {
    std::vector<int> p{tok::BOS, op, arg};
    for (int s : x) p.push_back(tok::sym(s));
    p.push_back(tok::SEP);
    return p;
}

inline std::vector<int> completion_tokens(const std::vector<int>& y) {
    std::vector<int> c;
    for (int s : y) c.push_back(tok::sym(s));
    c.push_back(tok::EOS);
    return c;
}

inline std::vector<int> symbols_of_prompt(const std::vector<int>& prompt) {
    if (prompt.size() < 4 || prompt.front() != tok::BOS || prompt.back() != tok::SEP)
        throw InputError("malformed prompt");
    std::vector<int> x;
    for (std::size_t i = 3; i + 1 < prompt.size(); ++i) x.push_back(prompt[i] - tok::kSymBase);
    return x;
}

/// True when the example's completion is the rule's output for its prompt.
inline bool check_example(const TaskSpec& t, const Example& e) {
    try {
        return completion_tokens(apply_rule(t, symbols_of_prompt(e.prompt))) == e.completion;
    } catch (const std::exception&) {
        return false;
    }
}

/// Same example with the instruction tokens filled in.
inline Example instructed(const TaskSpec& t, Example e) {
    e.prompt[1] = op_token(t.kind);
    e.prompt[2] = tok::arg(t.param);
    return e;
}

/// Random input for a task.
inline std::vector<int> sample_input(const TaskSpec& t, Rng& rng) {
    std::vector<int> x;
    if (t.kind == TaskKind::ModAdd)
        return {static_cast<int>(rng.index(tok::kNumSymbols)), static_cast<int>(rng.index(tok::kNumSymbols))};
    const std::size_t n = 3 + rng.index(4);  // 3..6 symbols
    for (std::size_t i = 0; i < n; ++i) x.push_back(static_cast<int>(rng.index(tok::kNumSymbols)));
    if (t.kind == TaskKind::Filter && rng.uniform() < 0.7) x[rng.index(n)] = t.param;
    return x;
}

inline std::size_t input_space_size(const TaskSpec& t) {
    if (t.kind == TaskKind::ModAdd) return tok::kNumSymbols * tok::kNumSymbols;
    return 16 * 16 * 16 * (1 + 16 + 256 + 4096);
}

// ---------------------------------------------------------------------------
// Descriptions

namespace detail {

inline const char* number_word(int v) {
    static const char* w[] = {"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"};
    return w[v];
}

inline std::string fill(std::string s, const TaskSpec& t) {
    auto rep = [&](const std::string& key, const std::string& val) {
        for (std::size_t p; (p = s.find(key)) != std::string::npos;) s.replace(p, key.size(), val);
    };
    rep("{k}", number_word(t.param));
    rep("{sym}", std::string(1, static_cast<char>('a' + t.param)));
    return s;
}

inline std::vector<std::string> cores(TaskKind k) {
    switch (k) {
        case TaskKind::Copy:
            return {"copy the symbols", "copy each token unchanged", "output an identical copy of the sequence",
                    "copy the sequence exactly"};
        case TaskKind::Reverse:
            return {"reverse the symbols", "output the sequence in reverse order", "reverse the order of the tokens",
                    "write the tokens backwards in reverse"};
        case TaskKind::Sort:
            return {"sort the symbols ascending", "sort the tokens in ascending order",
                    "arrange the sequence in sorted ascending order", "sort every token from low to high"};
        case TaskKind::CaseMap:
            return {"swap the case of each symbol", "change every token to the opposite case",
                    "map each symbol to its other case", "flip the case of the tokens"};
        case TaskKind::Shift:
            return {"shift each symbol forward by {k}", "shift every token up by {k} places",
                    "shift the symbols ahead {k} steps", "add {k} to each token and shift it"};
        case TaskKind::Rotate:
            return {"rotate the sequence left by {k}", "rotate the tokens {k} positions to the left",
                    "cyclically rotate the symbols by {k}", "rotate the list left {k} times"};
        case TaskKind::Filter:
            return {"remove every {sym} symbol", "filter out the token {sym}", "delete all occurrences of {sym}",
                    "drop each {sym} and keep the rest"};
        case TaskKind::ModAdd:
            return {"add the two digits modulo {k}", "sum the numbers mod {k}",
                    "compute the sum of both digits modulo {k}", "add both numbers and reduce mod {k}"};
        case TaskKind::Repeat:
            return {"repeat each symbol {k} times", "repeat every token {k} times in a row",
                    "write each symbol {k} times repeated", "repeat the tokens so each appears {k} times"};
    }
    return {};
}

inline const std::vector<std::string>& leads(bool eval) {
    static const std::vector<std::string> train{"", "please", "your job is to", "task:", "now", "you must"};
    static const std::vector<std::string> ev{"kindly", "the goal is to", "instruction:", "go ahead and"};
    return eval ? ev : train;
}

inline const std::vector<std::string>& tails(bool eval) {
    static const std::vector<std::string> train{"", "for the given input", "and print the result"};
    static const std::vector<std::string> ev{"then answer", "in the output"};
    return eval ? ev : train;
}

inline std::string join_words(const std::vector<std::string>& parts) {
    std::string s;
    for (const auto& p : parts) {
        if (p.empty()) continue;
        if (!s.empty()) s += ' ';
        s += p;
    }
    return s;
}

}  // namespace detail

enum class DescSplit { Train, Eval };

/// Every distinct description of a split, in a fixed order.
inline std::vector<std::string> description_pool(const TaskSpec& t, DescSplit split) {
    const bool ev = split == DescSplit::Eval;
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& lead : detail::leads(ev))
        for (const auto& core : detail::cores(t.kind))
            for (const auto& tail : detail::tails(ev)) {
                std::string s = detail::join_words({lead, detail::fill(core, t), tail});
                if (seen.insert(s).second) out.push_back(s);
            }
    return out;
}

/// n distinct descriptions drawn from the split's template pool.
inline std::vector<std::string> description_variants(const TaskSpec& t, DescSplit split, std::size_t n,
                                                     std::uint64_t seed) {
    auto pool = description_pool(t, split);
    if (n > pool.size())
        throw CapacityError("description_variants: " + std::to_string(n) + " requested, " + t.id() + " has " +
                            std::to_string(pool.size()) + " " + (split == DescSplit::Eval ? "eval" : "train") +
                            " templates");
    Rng rng(seed ^ fnv1a64(t.id()));
    rng.shuffle(pool);
    pool.resize(n);
    return pool;
}

/// Control arm: strings of random letters shaped like short sentences.
inline std::vector<std::string> random_descriptions(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::string> words;
        const std::size_t nw = 3 + rng.index(5);
        for (std::size_t w = 0; w < nw; ++w) {
            std::string s;
            const std::size_t len = 2 + rng.index(7);
            for (std::size_t c = 0; c < len; ++c) s.push_back(static_cast<char>('a' + rng.index(26)));
            words.push_back(s);
        }
        out.push_back(detail::join_words(words));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tasks and suites

struct ToyTask {
    std::string id;
    TaskSpec spec;
    std::vector<Example> train;
    std::vector<Example> test;
    std::vector<std::string> descriptions;       // training-split descriptions
    std::vector<std::string> eval_descriptions;  // unseen paraphrases
};

inline ToyTask make_task(const TaskSpec& spec, std::size_t n_train, std::size_t n_test, std::size_t n_descriptions,
                         std::uint64_t seed) {
    make_spec(spec.kind, spec.param);
    if (n_train == 0 || n_test == 0 || n_descriptions == 0)
        throw ConfigError("make_task: example and description counts must be positive");
    if (n_train + n_test > input_space_size(spec) / 2)
        throw CapacityError("make_task: " + spec.id() + " cannot supply " + std::to_string(n_train + n_test) +
                            " distinct examples");
    ToyTask t;
    t.spec = spec;
    t.id = spec.id();
    Rng rng(seed ^ fnv1a64(t.id));
    std::set<std::vector<int>> seen;
    while (t.train.size() + t.test.size() < n_train + n_test) {
        auto x = sample_input(spec, rng);
        if (!seen.insert(x).second) continue;
        Example e{prompt_tokens(x), completion_tokens(apply_rule(spec, x))};
        if (!check_example(spec, e)) throw ContractError("make_task: rule self-check failed for " + t.id);
        (t.train.size() < n_train ? t.train : t.test).push_back(std::move(e));
    }
    t.descriptions = description_variants(spec, DescSplit::Train, n_descriptions, seed);
    t.eval_descriptions =
        description_variants(spec, DescSplit::Eval,
                             std::min(n_descriptions, description_pool(spec, DescSplit::Eval).size()), seed + 1);
    return t;
}

inline ToyTask make_task(const std::string& kind, int param, std::size_t n_train, std::size_t n_test,
                         std::size_t n_descriptions, std::uint64_t seed) {
    return make_task(make_spec(parse_kind(kind), param), n_train, n_test, n_descriptions, seed);
}

struct TaskSuite {
    std::vector<ToyTask> train_tasks;
    std::vector<ToyTask> held_out;

    const ToyTask* find(const std::string& id) const {
        for (const auto* v : {&train_tasks, &held_out})
            for (const auto& t : *v)
                if (t.id == id) return &t;
        return nullptr;
    }
};

/// n train descriptions from tasks other than `task_id`.
inline std::vector<std::string> unaligned_descriptions(const TaskSuite& suite, const std::string& task_id,
                                                       std::size_t n, std::uint64_t seed) {
    std::vector<std::string> pool;
    for (const auto* v : {&suite.train_tasks, &suite.held_out})
        for (const auto& t : *v)
            if (t.id != task_id) pool.insert(pool.end(), t.descriptions.begin(), t.descriptions.end());
    if (suite.train_tasks.size() + suite.held_out.size() < 2 || pool.empty())
        throw CapacityError("unaligned_descriptions: suite needs at least two tasks");
    Rng rng(seed ^ fnv1a64(task_id));
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(pool[rng.index(pool.size())]);
    return out;
}

struct SuiteConfig {
    // Held out: unseen parameterizations of trained kinds plus one unseen kind.
    std::vector<std::string> train_ids{"copy",     "reverse",  "sort",     "case_map",       "shift_1",
                                       "shift_2",  "shift_4",  "shift_5",  "shift_6",        "shift_7",
                                       "rotate_1", "rotate_3", "rotate_4", "rotate_5",       "filter_token_0",
                                       "filter_token_2", "filter_token_3", "repeat_2"};
    std::vector<std::string> held_out_ids{"shift_3", "rotate_2", "modular_add_5"};
    std::size_t n_train = 96;
    std::size_t n_test = 32;
    std::size_t n_descriptions = 48;
};

inline TaskSuite make_suite(const SuiteConfig& c, std::uint64_t seed) {
    TaskSuite s;
    std::set<std::string> train_ids(c.train_ids.begin(), c.train_ids.end());
    for (const auto& id : c.train_ids) s.train_tasks.push_back(make_task(parse_task_id(id), c.n_train, c.n_test, c.n_descriptions, seed));
    for (const auto& id : c.held_out_ids) {
        if (train_ids.count(id)) throw ConfigError("make_suite: held-out task '" + id + "' is also a training task");
        s.held_out.push_back(make_task(parse_task_id(id), c.n_train, c.n_test, c.n_descriptions, seed));
    }
    return s;
}

/// Every task spec the base model is pretrained on (all kinds, all parameters).
inline std::vector<TaskSpec> all_task_specs() {
    std::vector<TaskSpec> out;
    for (const auto& [k, _] : task_kind_names()) {
        auto [lo, hi] = param_range(k);
        for (int p = lo; p <= hi; ++p) out.push_back({k, p});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Text dump: one field per line.
//
//   task <id>
//   description <text>          (training split)
//   eval_description <text>
//   train <prompt ids> | <completion ids>
//   test <prompt ids> | <completion ids>
//   end

inline void dump_tasks(const std::vector<ToyTask>& tasks, std::ostream& out) {
    auto ids = [&](const std::vector<int>& v) {
        for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
    };
    for (const auto& t : tasks) {
        out << "task " << t.id << '\n';
        for (const auto& d : t.descriptions) out << "description " << d << '\n';
        for (const auto& d : t.eval_descriptions) out << "eval_description " << d << '\n';
        for (const auto* split : {&t.train, &t.test})
            for (const auto& e : *split) {
                out << (split == &t.train ? "train " : "test ");
                ids(e.prompt);
                out << " | ";
                ids(e.completion);
                out << '\n';
            }
        out << "end\n";
    }
}

inline void dump_tasks(const std::vector<ToyTask>& tasks, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    dump_tasks(tasks, out);
}

inline std::vector<ToyTask> load_tasks(std::istream& in, const std::string& name = "<stream>") {
    std::vector<ToyTask> out;
    std::string line;
    std::size_t lineno = 0;
    ToyTask* cur = nullptr;
    auto fail = [&](const std::string& msg) { return InputError(name + " line " + std::to_string(lineno) + ": " + msg); };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto sp = line.find(' ');
        const std::string key = line.substr(0, sp);
        const std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
        if (key == "task") {
            out.emplace_back();
            cur = &out.back();
            cur->id = rest;
            try {
                cur->spec = parse_task_id(rest);
            } catch (const ConfigError& e) {
                throw fail(e.what());
            }
            continue;
        }
        if (!cur) throw fail("record before 'task'");
        if (key == "end") {
            if (cur->descriptions.empty()) throw fail("task '" + cur->id + "' has no descriptions");
            cur = nullptr;
        } else if (key == "description") {
            cur->descriptions.push_back(rest);
        } else if (key == "eval_description") {
            cur->eval_descriptions.push_back(rest);
        } else if (key == "train" || key == "test") {
            const auto bar = rest.find('|');
            if (bar == std::string::npos) throw fail("expected '<prompt> | <completion>'");
            auto parse = [&](const std::string& s) {
                std::vector<int> v;
                std::istringstream ss(s);
                int x;
                while (ss >> x) v.push_back(x);
                if (!ss.eof()) throw fail("bad token id");
                return v;
            };
            Example e{parse(rest.substr(0, bar)), parse(rest.substr(bar + 1))};
            if (!check_example(cur->spec, e)) throw fail("example fails the rule of " + cur->id);
            (key == "train" ? cur->train : cur->test).push_back(std::move(e));
        } else {
            throw fail("unknown record '" + key + "'");
        }
    }
    if (cur) throw fail("missing 'end'");
    return out;
}

inline std::vector<ToyTask> load_tasks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open task file '" + path + "'");
    return load_tasks(in, path);
}

}  // namespace t2l
