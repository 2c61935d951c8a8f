#pragma once

// Run configuration: a fixed schema of dotted keys backed by typed fields.
// Values resolve as defaults <- YAML file <- command-line overrides.

#include <yaml-cpp/yaml.h>

#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "t2l/error.hpp"
#include "t2l/experiments.hpp"

namespace t2l {

struct RunConfig {
    std::string subcommand;
    std::uint64_t seed = 0;

    struct Paths {
        std::string out_dir = "run";
        std::string base;      // T2LM base checkpoint
        std::string tasks;     // optional task dump; ids are used otherwise
        std::string library;   // adapter manifest
        std::string ckpt;      // T2LH hypernet
        std::string adapter;   // T2LA
        std::string embedding_table;
    } paths;

    BaseLMConfig base{};
    LoraConfig lora{};
    TrainConfig train{.max_steps = 400, .batch_size = 16, .max_lr = 1e-2, .warmup_fraction = 0.1};
    TrainConfig pretrain = PretrainConfig{}.train;

    struct Hyper {
        std::string arch = "M";
        std::size_t d_task = ZeroShotConfig{}.d_task;
        std::size_t d_task_enc = 64;
        std::size_t d_embed = 32;
        std::size_t d_hidden = 128;
        double dropout = 0.05;
    } hypernet;

    struct Embed {
        std::string provider = "hashed";
        std::uint64_t hash_seed = kDefaultHashSeed;
    } embeddings;

    struct Tasks {
        std::vector<std::string> train = SuiteConfig{}.train_ids;
        std::vector<std::string> held_out = SuiteConfig{}.held_out_ids;
        std::size_t n_train = SuiteConfig{}.n_train;
        std::size_t n_test = SuiteConfig{}.n_test;
        std::size_t n_descriptions = SuiteConfig{}.n_descriptions;
        std::uint64_t seed = 7;  // data generation seed, separate from training seeds
    } tasks;

    struct Study {
        std::string kind = "similarity";  // similarity, compression, zero-shot, alignment
        std::vector<std::size_t> sizes{2, 4, 8, 16};
        std::size_t n_groups = 4;
        std::size_t members_per_group = 6;
        std::size_t multitask_steps = ZeroShotConfig{}.multitask.max_steps;
        double multitask_lr = ZeroShotConfig{}.multitask.max_lr;
        std::size_t sft_steps = ZeroShotConfig{}.sft.max_steps;
        double sft_lr = ZeroShotConfig{}.sft.max_lr;
        std::size_t recon_steps = 2000;
        double recon_lr = 1e-3;
    } study;

    // Subcommand-specific inputs that are still recorded in the manifest.
    std::vector<std::string> describe;
    std::vector<std::string> adapters;
    std::string output;  // explicit output file, where a subcommand takes one

    SuiteConfig suite_config() const {
        SuiteConfig s;
        s.train_ids = tasks.train;
        s.held_out_ids = tasks.held_out;
        s.n_train = tasks.n_train;
        s.n_test = tasks.n_test;
        s.n_descriptions = tasks.n_descriptions;
        return s;
    }

    HypernetConfig hypernet_config(const BaseLMConfig& lm, std::size_t d_task) const {
        HypernetConfig c = HypernetConfig::for_model(lm, lora, parse_arch(hypernet.arch), d_task);
        c.d_task_enc = hypernet.d_task_enc;
        c.d_embed = hypernet.d_embed;
        c.d_hidden = hypernet.d_hidden;
        c.dropout = hypernet.dropout;
        return c;
    }
};

// ---------------------------------------------------------------------------
// Schema

namespace detail {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seeds are stored in size_t fields");

using FieldRef =
    std::variant<std::string*, std::size_t*, double*, bool*, std::vector<std::string>*, std::vector<std::size_t>*>;

struct Field {
    std::string key;
    FieldRef ref;
};

inline const char* kind_of(const FieldRef& r) {
    switch (r.index()) {
        case 0: return "string";
        case 1: return "non-negative integer";
        case 2: return "number";
        case 3: return "boolean";
        case 4: return "list of strings";
        default: return "list of non-negative integers";
    }
}

inline std::vector<Field> schema(RunConfig& c) {
    auto train = [](const std::string& p, TrainConfig& t) {
        return std::vector<Field>{{p + ".max_steps", &t.max_steps},
                                  {p + ".steps_per_task", &t.steps_per_task},
                                  {p + ".batch_size", &t.batch_size},
                                  {p + ".max_lr", &t.max_lr},
                                  {p + ".warmup_fraction", &t.warmup_fraction},
                                  {p + ".grad_clip_norm", &t.grad_clip_norm},
                                  {p + ".neftune_alpha", &t.neftune_alpha},
                                  {p + ".lora_dropout", &t.lora_dropout},
                                  {p + ".log_every", &t.log_every},
                                  {p + ".checkpoint_every", &t.checkpoint_every}};
    };
    std::vector<Field> f{
        {"seed", &c.seed},
        {"paths.out_dir", &c.paths.out_dir},
        {"paths.base", &c.paths.base},
        {"paths.tasks", &c.paths.tasks},
        {"paths.library", &c.paths.library},
        {"paths.ckpt", &c.paths.ckpt},
        {"paths.adapter", &c.paths.adapter},
        {"paths.embedding_table", &c.paths.embedding_table},
        {"base.vocab_size", &c.base.vocab_size},
        {"base.d_model", &c.base.d_model},
        {"base.n_layers", &c.base.n_layers},
        {"base.n_heads", &c.base.n_heads},
        {"base.n_kv_heads", &c.base.n_kv_heads},
        {"base.d_ff", &c.base.d_ff},
        {"base.max_seq", &c.base.max_seq},
        {"base.target_modules", &c.base.target_modules},
        {"lora.rank", &c.lora.rank},
        {"lora.alpha", &c.lora.alpha},
        {"lora.use_rslora", &c.lora.use_rslora},
        {"lora.dropout", &c.lora.dropout},
        {"hypernet.arch", &c.hypernet.arch},
        {"hypernet.d_task", &c.hypernet.d_task},
        {"hypernet.d_task_enc", &c.hypernet.d_task_enc},
        {"hypernet.d_embed", &c.hypernet.d_embed},
        {"hypernet.d_hidden", &c.hypernet.d_hidden},
        {"hypernet.dropout", &c.hypernet.dropout},
        {"embeddings.provider", &c.embeddings.provider},
        {"embeddings.hash_seed", &c.embeddings.hash_seed},
        {"tasks.train", &c.tasks.train},
        {"tasks.held_out", &c.tasks.held_out},
        {"tasks.n_train", &c.tasks.n_train},
        {"tasks.n_test", &c.tasks.n_test},
        {"tasks.n_descriptions", &c.tasks.n_descriptions},
        {"tasks.seed", &c.tasks.seed},
        {"study.kind", &c.study.kind},
        {"study.sizes", &c.study.sizes},
        {"study.n_groups", &c.study.n_groups},
        {"study.members_per_group", &c.study.members_per_group},
        {"study.multitask_steps", &c.study.multitask_steps},
        {"study.multitask_lr", &c.study.multitask_lr},
        {"study.sft_steps", &c.study.sft_steps},
        {"study.sft_lr", &c.study.sft_lr},
        {"study.recon_steps", &c.study.recon_steps},
        {"study.recon_lr", &c.study.recon_lr},
        {"describe", &c.describe},
        {"adapters", &c.adapters},
        {"output", &c.output},
    };
    for (auto& x : train("train", c.train)) f.push_back(x);
    for (auto& x : train("pretrain", c.pretrain)) f.push_back(x);
    return f;
}

inline std::string valid_keys(RunConfig& c) {
    std::string s;
    for (const auto& f : schema(c)) s += (s.empty() ? "" : ", ") + f.key;
    return s;
}

template <class T>
T parse_scalar(const std::string& key, const std::string& text);

template <>
inline std::string parse_scalar<std::string>(const std::string&, const std::string& text) {
    return text;
}

template <>
inline std::uint64_t parse_scalar<std::uint64_t>(const std::string& key, const std::string& text) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        if (!text.empty() && text[0] == '-') throw std::invalid_argument("negative");
        v = std::stoull(text, &used, 0);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size())
        throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + text + "'");
    return v;
}

template <>
inline double parse_scalar<double>(const std::string& key, const std::string& text) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size() || !std::isfinite(v))
        throw ConfigError("config key '" + key + "' expects a number, got '" + text + "'");
    return v;
}

template <>
inline bool parse_scalar<bool>(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + text + "'");
}

inline std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

/// Assigns a textual value (a command-line override) to a field.
inline void assign_text(const Field& f, const std::string& text) {
    std::visit(
        [&](auto* p) {
            using T = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<T, std::vector<std::string>>) {
                *p = split_list(text);
            } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
                p->clear();
                for (const auto& s : split_list(text))
                    p->push_back(static_cast<std::size_t>(parse_scalar<std::uint64_t>(f.key, s)));
            } else if constexpr (std::is_same_v<T, std::size_t>) {
                *p = static_cast<std::size_t>(parse_scalar<std::uint64_t>(f.key, text));
            } else {
                *p = parse_scalar<T>(f.key, text);
            }
        },
        f.ref);
}

inline void assign_yaml(const Field& f, const YAML::Node& node) {
    const bool want_list = f.ref.index() >= 4;
    if (want_list) {
        if (!node.IsSequence())
            throw ConfigError("config key '" + f.key + "' expects a " + kind_of(f.ref));
        std::string joined;
        for (const auto& item : node) {
            if (!item.IsScalar()) throw ConfigError("config key '" + f.key + "' expects a " + kind_of(f.ref));
            joined += (joined.empty() ? "" : ",") + item.Scalar();
        }
        assign_text(f, joined);
        return;
    }
    if (!node.IsScalar()) throw ConfigError("config key '" + f.key + "' expects a " + kind_of(f.ref));
    assign_text(f, node.Scalar());
}

inline void walk(RunConfig& c, const YAML::Node& node, const std::string& prefix) {
    auto fields = schema(c);
    for (const auto& kv : node) {
        const std::string key = prefix + kv.first.as<std::string>();
        const Field* hit = nullptr;
        bool is_section = false;
        for (const auto& f : fields) {
            if (f.key == key) hit = &f;
            if (f.key.rfind(key + ".", 0) == 0) is_section = true;
        }
        if (hit) {
            assign_yaml(*hit, kv.second);
        } else if (is_section && kv.second.IsMap()) {
            walk(c, kv.second, key + ".");
        } else if (is_section) {
            throw ConfigError("config section '" + key + "' must be a mapping");
        } else {
            throw ConfigError("unknown config key '" + key + "'; valid keys: " + valid_keys(c));
        }
    }
}

}  // namespace detail

/// Applies "key=value" overrides on top of `c`.
inline void apply_overrides(RunConfig& c, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
        const std::string key = o.substr(0, eq);
        bool done = false;
        for (const auto& f : detail::schema(c))
            if (f.key == key) {
                detail::assign_text(f, o.substr(eq + 1));
                done = true;
            }
        if (!done) throw ConfigError("unknown config key '" + key + "'; valid keys: " + detail::valid_keys(c));
    }
}

/// Parses YAML text over the defaults.
inline RunConfig parse_config(const std::string& yaml_text, RunConfig base = {}) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("config is not valid YAML: ") + e.what());
    }
    if (root.IsNull()) return base;
    if (!root.IsMap()) throw ConfigError("config must be a mapping of keys");
    for (const auto& kv : root)
        if (kv.first.as<std::string>() == "subcommand") base.subcommand = kv.second.as<std::string>();
    YAML::Node rest = YAML::Clone(root);
    rest.remove("subcommand");
    detail::walk(base, rest, "");
    return base;
}

/// defaults <- file <- overrides. An empty path means no file. Without an
/// explicit seed anywhere, T2L_SEED supplies it.
inline RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
    RunConfig c;
    if (const char* env = std::getenv("T2L_SEED")) c.seed = detail::parse_scalar<std::uint64_t>("T2L_SEED", env);
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read config '" + path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        c = parse_config(ss.str(), c);
    }
    apply_overrides(c, overrides);
    return c;
}

/// Full resolved config as YAML, nested by section.
inline std::string dump_config(const RunConfig& cfg) {
    RunConfig c = cfg;
    YAML::Emitter out;
    out << YAML::BeginMap;
    if (!c.subcommand.empty()) out << YAML::Key << "subcommand" << YAML::Value << c.subcommand;
    std::string section;
    for (const auto& f : detail::schema(c)) {
        const auto dot = f.key.find('.');
        const std::string sec = dot == std::string::npos ? "" : f.key.substr(0, dot);
        const std::string leaf = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
        if (sec != section) {
            if (!section.empty()) out << YAML::EndMap;
            if (!sec.empty()) out << YAML::Key << sec << YAML::Value << YAML::BeginMap;
            section = sec;
        }
        out << YAML::Key << leaf << YAML::Value;
        std::visit(
            [&](auto* p) {
                using T = std::remove_pointer_t<decltype(p)>;
                if constexpr (std::is_same_v<T, std::vector<std::string>> ||
                              std::is_same_v<T, std::vector<std::size_t>>) {
                    out << YAML::Flow << YAML::BeginSeq;
                    for (const auto& v : *p) out << v;
                    out << YAML::EndSeq;
                } else if constexpr (std::is_same_v<T, double>) {
                    std::ostringstream s;
                    s << std::setprecision(17) << *p;
                    out << s.str();
                } else {
                    out << *p;
                }
            },
            f.ref);
    }
    if (!section.empty()) out << YAML::EndMap;
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

}  // namespace t2l
