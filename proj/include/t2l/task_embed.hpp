#pragma once

// Task-descriptor providers: one-hot, hashed bag of tokens, and tables of
// precomputed vectors read from disk. Learned vectors live in the hypernet.

#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "t2l/error.hpp"
#include "t2l/rng.hpp"
#include "t2l/tensor.hpp"

namespace t2l {

enum class EmbedProvider { OneHot, Learned, Hashed, Table };

inline const char* provider_name(EmbedProvider p) {
    switch (p) {
        case EmbedProvider::OneHot: return "onehot";
        case EmbedProvider::Learned: return "learned";
        case EmbedProvider::Hashed: return "hashed";
        case EmbedProvider::Table: return "table";
    }
    return "?";
}

inline EmbedProvider parse_provider(const std::string& s) {
    if (s == "onehot") return EmbedProvider::OneHot;
    if (s == "learned") return EmbedProvider::Learned;
    if (s == "hashed") return EmbedProvider::Hashed;
    if (s == "table") return EmbedProvider::Table;
    throw ConfigError("unknown embedding provider '" + s + "' (expected onehot, learned, hashed, table)");
}

struct TaskEmbedding {
    Tensor vector;  // [d_task]
    EmbedProvider provider = EmbedProvider::Hashed;
    std::string source;

    std::size_t dim() const { return vector.numel(); }
};

inline TaskEmbedding embed_one_hot(std::size_t index, std::size_t n_tasks) {
    if (index >= n_tasks)
        throw IndexError("embed_one_hot: index " + std::to_string(index) + " outside [0, " + std::to_string(n_tasks) + ")");
    std::vector<double> v(n_tasks, 0.0);
    v[index] = 1.0;
    return {Tensor({n_tasks}, std::move(v)), EmbedProvider::OneHot, std::to_string(index)};
}

/// Lowercased alphanumeric runs.
inline std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char ch : text) {
        if (std::isalnum(ch)) {
            cur.push_back(static_cast<char>(std::tolower(ch)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline constexpr std::uint64_t kDefaultHashSeed = 0x7432'6c5f'6861'7368ULL;

/// Signed feature hashing of the token multiset, L2-normalized.
inline TaskEmbedding embed_hashed(const std::string& description, std::size_t d_task,
                                  std::uint64_t hash_seed = kDefaultHashSeed) {
    if (d_task == 0) throw ConfigError("embed_hashed: d_task must be positive");
    const auto words = tokenize_words(description);
    if (words.empty()) throw InputError("embed_hashed: description has no tokens");
    std::vector<double> v(d_task, 0.0);
    for (const auto& w : words) {
        const std::uint64_t h = mix64(fnv1a64(w, hash_seed));
        v[h % d_task] += (h >> 63) ? -1.0 : 1.0;
    }
    double n = std::sqrt(sq_norm(v));
    if (n == 0.0) {
        // Every bucket cancelled; fall back to the first token's bucket.
        const std::uint64_t h = mix64(fnv1a64(words[0], hash_seed));
        v[h % d_task] = 1.0;
        n = 1.0;
    }
    for (double& x : v) x /= n;
    return {Tensor({d_task}, std::move(v)), EmbedProvider::Hashed, description};
}

// ---------------------------------------------------------------------------
// Embedding tables: UTF-8 lines "description<TAB>v1,v2,...".

class EmbeddingDimensionError : public InputError {
   public:
    using InputError::InputError;
};
class DuplicateKeyError : public InputError {
   public:
    using InputError::InputError;
};
class ParseError : public InputError {
   public:
    using InputError::InputError;
};

class EmbeddingTable {
   public:
    std::size_t dim() const { return dim_; }
    std::size_t size() const { return rows_.size(); }

    void insert(const std::string& key, std::vector<double> v) {
        if (v.empty()) throw EmbeddingDimensionError("embedding table: empty vector for '" + key + "'");
        if (dim_ == 0) dim_ = v.size();
        if (v.size() != dim_)
            throw EmbeddingDimensionError("embedding table: '" + key + "' has " + std::to_string(v.size()) +
                                          " values, table dimension is " + std::to_string(dim_));
        if (!rows_.emplace(key, std::move(v)).second)
            throw DuplicateKeyError("embedding table: duplicate description '" + key + "'");
    }

    /// Explicit miss for absent descriptions.
    std::optional<TaskEmbedding> lookup(const std::string& description) const {
        auto it = rows_.find(description);
        if (it == rows_.end()) return std::nullopt;
        return TaskEmbedding{Tensor({dim_}, it->second), EmbedProvider::Table, description};
    }

    const std::map<std::string, std::vector<double>>& rows() const { return rows_; }

   private:
    std::size_t dim_ = 0;
    std::map<std::string, std::vector<double>> rows_;
};

inline EmbeddingTable load_embedding_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open embedding table '" + path + "'");
    EmbeddingTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.rfind('\t');
        const std::string where = "'" + path + "' line " + std::to_string(lineno);
        if (tab == std::string::npos || tab == 0) throw ParseError(where + ": expected description<TAB>values");
        std::vector<double> v;
        std::stringstream ss(line.substr(tab + 1));
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            std::size_t used = 0;
            double x = 0.0;
            try {
                x = std::stod(cell, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
            if (used == 0 || used != cell.size() || !std::isfinite(x))
                throw ParseError(where + ": bad number '" + cell + "'");
            v.push_back(x);
        }
        try {
            table.insert(line.substr(0, tab), std::move(v));
        } catch (const EmbeddingDimensionError& e) {
            throw EmbeddingDimensionError(where + ": " + e.what());
        } catch (const DuplicateKeyError& e) {
            throw DuplicateKeyError(where + ": " + e.what());
        }
    }
    return table;
}

inline void save_embedding_table(const EmbeddingTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    out.precision(17);
    for (const auto& [k, v] : table.rows()) {
        out << k << '\t';
        for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
        out << '\n';
    }
}

inline double cosine_similarity(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ShapeError("cosine_similarity: length mismatch");
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xy += x[i] * y[i];
        xx += x[i] * x[i];
        yy += y[i] * y[i];
    }
    if (xx == 0.0 || yy == 0.0) throw UndefinedError("cosine similarity of a zero vector is undefined");
    return std::clamp(xy / std::sqrt(xx * yy), -1.0, 1.0);
}

}  // namespace t2l
