#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "t2l/error.hpp"
#include "t2l/rng.hpp"

namespace t2l {

/// Input/output width of one adaptable linear map.
struct ModuleDims {
    std::string name;
    std::size_t d_in = 0;
    std::size_t d_out = 0;
};

/// Architecture of the frozen toy decoder and where adapters attach.
struct BaseLMConfig {
    std::size_t vocab_size = 64;
    std::size_t d_model = 64;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t n_kv_heads = 0;  // 0: same as n_heads
    std::size_t d_ff = 256;
    std::size_t max_seq = 32;
    std::vector<std::string> target_modules{"q_proj", "v_proj"};

    static const std::vector<std::string>& known_modules() {
        static const std::vector<std::string> names{"q_proj", "k_proj", "v_proj", "o_proj", "up_proj", "down_proj"};
        return names;
    }

    std::size_t kv_heads() const { return n_kv_heads == 0 ? n_heads : n_kv_heads; }
    std::size_t head_dim() const { return d_model / n_heads; }
    std::size_t d_kv() const { return kv_heads() * head_dim(); }

    void validate() const {
        if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_seq == 0)
            throw ConfigError("BaseLMConfig: all extents must be positive");
        if (d_model % n_heads != 0)
            throw ConfigError("BaseLMConfig: n_heads (" + std::to_string(n_heads) + ") does not divide d_model (" +
                              std::to_string(d_model) + ")");
        if (n_heads % kv_heads() != 0) throw ConfigError("BaseLMConfig: n_kv_heads must divide n_heads");
        if (target_modules.empty()) throw ConfigError("BaseLMConfig: target_modules is empty");
        std::set<std::string> seen;
        for (const auto& m : target_modules) {
            bool known = false;
            for (const auto& k : known_modules()) known = known || k == m;
            if (!known) throw ConfigError("BaseLMConfig: unknown target module '" + m + "'");
            if (!seen.insert(m).second) throw ConfigError("BaseLMConfig: duplicate target module '" + m + "'");
        }
    }

    ModuleDims module_dims(const std::string& name) const {
        if (name == "q_proj" || name == "o_proj") return {name, d_model, d_model};
        if (name == "k_proj" || name == "v_proj") return {name, d_model, d_kv()};
        if (name == "up_proj") return {name, d_model, d_ff};
        if (name == "down_proj") return {name, d_ff, d_model};
        throw ConfigError("BaseLMConfig: unknown module '" + name + "'");
    }

    std::vector<ModuleDims> target_dims() const {
        std::vector<ModuleDims> out;
        for (const auto& m : target_modules) out.push_back(module_dims(m));
        return out;
    }

    std::size_t module_index(const std::string& name) const {
        for (std::size_t i = 0; i < target_modules.size(); ++i)
            if (target_modules[i] == name) return i;
        throw ConfigError("BaseLMConfig: '" + name + "' is not a target module");
    }

    /// Canonical text encoding; the fingerprint hashes exactly this string.
    std::string canonical() const {
        std::ostringstream os;
        os << "vocab=" << vocab_size << ";d_model=" << d_model << ";n_layers=" << n_layers << ";n_heads=" << n_heads
           << ";n_kv_heads=" << kv_heads() << ";d_ff=" << d_ff << ";max_seq=" << max_seq << ";targets=";
        for (std::size_t i = 0; i < target_modules.size(); ++i) os << (i ? "," : "") << target_modules[i];
        return os.str();
    }

    std::uint64_t fingerprint() const { return fnv1a64(canonical()); }

    bool operator==(const BaseLMConfig&) const = default;
};

/// Rank and scaling law of the adapters attached to a BaseLMConfig.
struct LoraConfig {
    std::size_t rank = 4;
    double alpha = 0.0;  // 0: 2 * rank
    bool use_rslora = true;
    double dropout = 0.0;

    double effective_alpha() const { return alpha > 0.0 ? alpha : 2.0 * static_cast<double>(rank); }
    double scaling() const {
        const double r = static_cast<double>(rank);
        return use_rslora ? effective_alpha() / std::sqrt(r) : effective_alpha() / r;
    }

    void validate(const BaseLMConfig& lm) const {
        if (rank == 0) throw ConfigError("LoraConfig: rank must be positive");
        for (const auto& d : lm.target_dims())
            if (rank >= std::min(d.d_in, d.d_out))
                throw ConfigError("LoraConfig: rank " + std::to_string(rank) + " is not below min(d_in, d_out) of " +
                                  d.name);
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("LoraConfig: dropout must lie in [0, 1)");
    }
};

}  // namespace t2l
