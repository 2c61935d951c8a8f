#pragma once

// LoRA adapter data model: pairs, adapter sets covering every injection point
// of a BaseLMConfig, merging, counting, weight-space similarity, and the T2LA
// file format.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "t2l/binary_io.hpp"
#include "t2l/lm_config.hpp"
#include "t2l/tensor.hpp"

namespace t2l {

/// One low-rank update: delta_W = scaling * B^T A, A [r, d_in], B [r, d_out].
struct LoraPair {
    Tensor a;
    Tensor b;
    double scaling = 1.0;

    std::size_t rank() const { return a.dim(0); }
    std::size_t d_in() const { return a.dim(1); }
    std::size_t d_out() const { return b.dim(1); }

    /// scaling * B^T A as a [d_out, d_in] tensor.
    Tensor delta_w() const { return scale(matmul(permute(b, {1, 0}), a), scaling); }
};

/// Adapters for every (target module, layer) of one base model.
///
/// Entries are stored in canonical order: layers ascending, then target-module
/// order, so entries()[l * n_modules + m] is the pair for (modules[m], l).
class AdapterSet {
   public:
    AdapterSet() = default;

    AdapterSet(std::vector<ModuleDims> modules, std::size_t n_layers, std::vector<LoraPair> entries,
               std::uint64_t fingerprint)
        : modules_(std::move(modules)), n_layers_(n_layers), entries_(std::move(entries)), fingerprint_(fingerprint) {
        if (entries_.size() != modules_.size() * n_layers_)
            throw ShapeError("AdapterSet: " + std::to_string(entries_.size()) + " entries for " +
                             std::to_string(modules_.size()) + " modules x " + std::to_string(n_layers_) + " layers");
        if (entries_.empty()) throw ShapeError("AdapterSet: no entries");
        const std::size_t r = entries_[0].rank();
        const double s = entries_[0].scaling;
        for (std::size_t l = 0; l < n_layers_; ++l) {
            for (std::size_t m = 0; m < modules_.size(); ++m) {
                const LoraPair& p = entries_[l * modules_.size() + m];
                if (p.a.rank() != 2 || p.b.rank() != 2 || p.a.dim(0) != r || p.b.dim(0) != r ||
                    p.a.dim(1) != modules_[m].d_in || p.b.dim(1) != modules_[m].d_out)
                    throw ShapeError("AdapterSet: pair (" + modules_[m].name + ", " + std::to_string(l) +
                                     ") has A " + shape_str(p.a.shape()) + " B " + shape_str(p.b.shape()) +
                                     ", expected rank " + std::to_string(r) + " and dims " +
                                     std::to_string(modules_[m].d_in) + "->" + std::to_string(modules_[m].d_out));
                if (p.scaling != s) throw ShapeError("AdapterSet: pairs disagree on scaling");
            }
        }
    }

    bool empty() const { return entries_.empty(); }
    const std::vector<ModuleDims>& modules() const { return modules_; }
    std::size_t n_layers() const { return n_layers_; }
    std::size_t rank() const { return entries_.at(0).rank(); }
    double scaling() const { return entries_.at(0).scaling; }
    std::uint64_t fingerprint() const { return fingerprint_; }
    const std::vector<LoraPair>& entries() const { return entries_; }
    std::vector<LoraPair>& mutable_entries() { return entries_; }

    const LoraPair& at(std::size_t module, std::size_t layer) const {
        if (module >= modules_.size() || layer >= n_layers_)
            throw IndexError("AdapterSet: no entry for module " + std::to_string(module) + ", layer " +
                             std::to_string(layer));
        return entries_[layer * modules_.size() + module];
    }
    const LoraPair& at(const std::string& module, std::size_t layer) const {
        for (std::size_t m = 0; m < modules_.size(); ++m)
            if (modules_[m].name == module) return at(m, layer);
        throw IndexError("AdapterSet: no module named '" + module + "'");
    }
    /// Index of a module name, or modules().size() when absent.
    std::size_t find_module(const std::string& module) const {
        for (std::size_t m = 0; m < modules_.size(); ++m)
            if (modules_[m].name == module) return m;
        return modules_.size();
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& p : entries_) n += p.a.numel() + p.b.numel();
        return n;
    }

    /// All A and B values in canonical flatten order (A before B, row-major).
    std::vector<double> flatten_ab() const {
        std::vector<double> out;
        out.reserve(param_count());
        for (const auto& p : entries_) {
            out.insert(out.end(), p.a.values().begin(), p.a.values().end());
            out.insert(out.end(), p.b.values().begin(), p.b.values().end());
        }
        return out;
    }

    /// All delta_W matrices, canonical order, each row-major [d_out, d_in].
    std::vector<double> flatten_dw() const {
        NoGradGuard no_grad;
        std::vector<double> out;
        for (const auto& p : entries_) {
            Tensor dw = p.delta_w();
            out.insert(out.end(), dw.values().begin(), dw.values().end());
        }
        return out;
    }

    /// Same layout, values replaced from a canonical flat vector.
    AdapterSet with_values(const std::vector<double>& flat, bool requires_grad = false) const {
        if (flat.size() != param_count()) throw ShapeError("AdapterSet::with_values: wrong length");
        std::vector<LoraPair> e;
        std::size_t off = 0;
        for (const auto& p : entries_) {
            auto take = [&](const Tensor& like) {
                std::vector<double> v(flat.begin() + static_cast<std::ptrdiff_t>(off),
                                      flat.begin() + static_cast<std::ptrdiff_t>(off + like.numel()));
                off += like.numel();
                return Tensor(like.shape(), std::move(v), requires_grad);
            };
            Tensor a = take(p.a);
            Tensor b = take(p.b);
            e.push_back({a, b, p.scaling});
        }
        AdapterSet out(modules_, n_layers_, std::move(e), fingerprint_);
        out.task_id = task_id;
        out.description = description;
        return out;
    }

    /// Constant copy with no tape linkage.
    AdapterSet detached() const { return with_values(flatten_ab()); }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (const auto& p : entries_) {
            out.push_back(p.a);
            out.push_back(p.b);
        }
        return out;
    }

    std::string task_id;
    std::string description;

   private:
    std::vector<ModuleDims> modules_;
    std::size_t n_layers_ = 0;
    std::vector<LoraPair> entries_;
    std::uint64_t fingerprint_ = 0;
};

/// Per-element statistics over a library, aligned with AdapterSet::flatten_ab().
struct ZScoreStats {
    std::vector<double> mean;
    std::vector<double> std;

    static constexpr double kFloor = 1e-8;

    std::size_t size() const { return mean.size(); }

    std::vector<double> normalize(const std::vector<double>& raw) const {
        if (raw.size() != mean.size()) throw ShapeError("ZScoreStats::normalize: wrong length");
        std::vector<double> z(raw.size());
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = (raw[i] - mean[i]) / std[i];
        return z;
    }
    std::vector<double> denormalize(const std::vector<double>& z) const {
        if (z.size() != mean.size()) throw ShapeError("ZScoreStats::denormalize: wrong length");
        std::vector<double> raw(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) raw[i] = z[i] * std[i] + mean[i];
        return raw;
    }
};

/// Ordered collection of adapters sharing one base config and rank.
struct AdapterLibrary {
    std::vector<AdapterSet> adapters;

    std::size_t size() const { return adapters.size(); }
    bool empty() const { return adapters.empty(); }

    void validate() const {
        for (const auto& a : adapters)
            if (a.fingerprint() != adapters.front().fingerprint() || a.rank() != adapters.front().rank() ||
                a.param_count() != adapters.front().param_count())
                throw FingerprintError("AdapterLibrary: members disagree on base config or rank");
    }
};

// ---------------------------------------------------------------------------

/// Exact adapter parameter count: sum over target modules of r * (d_in + d_out) * n_layers.
inline std::size_t param_count(const BaseLMConfig& lm, const LoraConfig& lora) {
    lm.validate();
    lora.validate(lm);
    std::size_t n = 0;
    for (const auto& d : lm.target_dims()) n += lora.rank * (d.d_in + d.d_out) * lm.n_layers;
    return n;
}

/// A ~ U(-1/d_in, 1/d_in), B = 0.
inline AdapterSet init_lora(const BaseLMConfig& lm, const LoraConfig& lora, std::uint64_t seed,
                            bool requires_grad = true) {
    lm.validate();
    lora.validate(lm);
    Rng rng(seed);
    const auto dims = lm.target_dims();
    std::vector<LoraPair> entries;
    for (std::size_t l = 0; l < lm.n_layers; ++l) {
        for (const auto& d : dims) {
            const double bound = 1.0 / static_cast<double>(d.d_in);
            entries.push_back({Tensor::uniform({lora.rank, d.d_in}, -bound, bound, rng, requires_grad),
                               Tensor::zeros({lora.rank, d.d_out}, requires_grad), lora.scaling()});
        }
    }
    return AdapterSet(dims, lm.n_layers, std::move(entries), lm.fingerprint());
}

/// W0 + scaling * B^T A.
inline Tensor merge(const Tensor& w0, const LoraPair& pair) {
    if (w0.rank() != 2 || w0.dim(0) != pair.d_out() || w0.dim(1) != pair.d_in())
        throw ShapeError("merge: W0 " + shape_str(w0.shape()) + " does not match adapter " +
                         std::to_string(pair.d_in()) + "->" + std::to_string(pair.d_out()));
    return add(w0, pair.delta_w());
}

namespace detail {

inline double cosine(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ShapeError("cosine: vectors of different length");
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xy += x[i] * y[i];
        xx += x[i] * x[i];
        yy += y[i] * y[i];
    }
    if (xx == 0.0 || yy == 0.0) throw UndefinedError("cosine similarity of a zero vector is undefined");
    return std::clamp(xy / std::sqrt(xx * yy), -1.0, 1.0);
}

inline void require_compatible(const AdapterSet& a, const AdapterSet& b) {
    if (a.fingerprint() != b.fingerprint())
        throw FingerprintError("adapters were built for different base configs");
    if (a.rank() != b.rank() || a.param_count() != b.param_count())
        throw ShapeError("adapters differ in rank or layout");
}

}  // namespace detail

/// Cosine of the concatenated flattened A and B matrices of all layers.
inline double similarity_ab(const AdapterSet& a, const AdapterSet& b) {
    detail::require_compatible(a, b);
    return detail::cosine(a.flatten_ab(), b.flatten_ab());
}

/// Cosine of the concatenated flattened delta_W matrices of all layers.
inline double similarity_dw(const AdapterSet& a, const AdapterSet& b) {
    detail::require_compatible(a, b);
    return detail::cosine(a.flatten_dw(), b.flatten_dw());
}

// ---------------------------------------------------------------------------
// T2LA file format

inline void save_adapter(const AdapterSet& set, const std::string& path) {
    io::BinaryWriter w(path);
    w.magic("T2LA");
    w.u32(io::kFormatVersion);
    w.u64(set.fingerprint());
    w.u32(static_cast<std::uint32_t>(set.rank()));
    w.f64(set.scaling());
    w.str(set.task_id);
    w.str(set.description);
    w.u32(static_cast<std::uint32_t>(set.n_layers()));
    w.u32(static_cast<std::uint32_t>(set.modules().size()));
    for (const auto& m : set.modules()) {
        w.str(m.name);
        w.u32(static_cast<std::uint32_t>(m.d_in));
        w.u32(static_cast<std::uint32_t>(m.d_out));
    }
    w.u32(static_cast<std::uint32_t>(set.entries().size()));
    for (std::size_t l = 0; l < set.n_layers(); ++l) {
        for (std::size_t m = 0; m < set.modules().size(); ++m) {
            const LoraPair& p = set.at(m, l);
            w.str(set.modules()[m].name);
            w.u32(static_cast<std::uint32_t>(l));
            w.u32(static_cast<std::uint32_t>(p.a.dim(0)));
            w.u32(static_cast<std::uint32_t>(p.a.dim(1)));
            w.u32(static_cast<std::uint32_t>(p.b.dim(0)));
            w.u32(static_cast<std::uint32_t>(p.b.dim(1)));
        }
    }
    for (const auto& p : set.entries()) {
        w.f64s(p.a.values());
        w.f64s(p.b.values());
    }
    w.finish();
}

inline AdapterSet load_adapter(const std::string& path) {
    io::BinaryReader r(path);
    r.expect_header("T2LA");
    const std::uint64_t fingerprint = r.u64();
    const std::size_t rank = r.u32();
    const double scaling = r.f64();
    std::string task_id = r.str();
    std::string description = r.str();
    const std::size_t n_layers = r.u32();
    const std::size_t n_modules = r.u32();
    if (n_layers == 0 || n_modules == 0 || n_layers > 4096 || n_modules > 64)
        throw FileFormatError("'" + path + "': implausible adapter layout");
    std::vector<ModuleDims> modules;
    for (std::size_t m = 0; m < n_modules; ++m) {
        ModuleDims d;
        d.name = r.str();
        d.d_in = r.u32();
        d.d_out = r.u32();
        modules.push_back(d);
    }
    const std::size_t n_entries = r.u32();
    if (n_entries != n_layers * n_modules) throw FileFormatError("'" + path + "': entry table size mismatch");
    struct Row {
        std::size_t ar, ac, br, bc;
    };
    std::vector<Row> table;
    for (std::size_t i = 0; i < n_entries; ++i) {
        const std::string name = r.str();
        const std::size_t layer = r.u32();
        Row row{r.u32(), r.u32(), r.u32(), r.u32()};
        if (name != modules[i % n_modules].name || layer != i / n_modules)
            throw FileFormatError("'" + path + "': entry table out of canonical order");
        if (row.ar != rank || row.br != rank || row.ac != modules[i % n_modules].d_in ||
            row.bc != modules[i % n_modules].d_out)
            throw FileFormatError("'" + path + "': entry dims disagree with module table");
        table.push_back(row);
    }
    std::vector<LoraPair> entries;
    for (const auto& row : table) {
        Tensor a({row.ar, row.ac}, r.f64s(row.ar * row.ac));
        Tensor b({row.br, row.bc}, r.f64s(row.br * row.bc));
        entries.push_back({a, b, scaling});
    }
    AdapterSet set(std::move(modules), n_layers, std::move(entries), fingerprint);
    set.task_id = std::move(task_id);
    set.description = std::move(description);
    return set;
}

/// Loads and checks the file was written for `lm`.
inline AdapterSet load_adapter(const std::string& path, const BaseLMConfig& lm) {
    AdapterSet set = load_adapter(path);
    if (set.fingerprint() != lm.fingerprint())
        throw FingerprintError("'" + path + "': adapter fingerprint does not match base config " + lm.canonical());
    return set;
}

// ---------------------------------------------------------------------------
// Library manifest: one adapter per line, "path<TAB>task_id<TAB>description".
// Lines starting with '#' are comments. Relative paths resolve against the
// manifest's directory.

struct ManifestEntry {
    std::string path;
    std::string task_id;
    std::string description;
};

inline void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open '" + path + "' for writing");
    out << "# t2l adapter library: path\ttask_id\tdescription\n";
    for (const auto& e : entries) {
        if (e.path.find('\t') != std::string::npos || e.task_id.find('\t') != std::string::npos ||
            e.description.find_first_of("\t\n") != std::string::npos)
            throw InputError("library manifest fields may not contain tabs or newlines");
        out << e.path << '\t' << e.task_id << '\t' << e.description << '\n';
    }
}

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open library manifest '" + path + "'");
    std::vector<ManifestEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos)
            throw InputError("'" + path + "' line " + std::to_string(lineno) + ": expected 3 tab-separated fields");
        out.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)});
    }
    return out;
}

inline std::string resolve_relative(const std::string& base_file, const std::string& p) {
    if (p.empty() || p[0] == '/') return p;
    const auto slash = base_file.rfind('/');
    return slash == std::string::npos ? p : base_file.substr(0, slash + 1) + p;
}

inline AdapterLibrary load_library(const std::string& manifest_path, const BaseLMConfig& lm) {
    AdapterLibrary lib;
    for (const auto& e : load_manifest(manifest_path)) {
        AdapterSet a = load_adapter(resolve_relative(manifest_path, e.path), lm);
        a.task_id = e.task_id;
        a.description = e.description;
        lib.adapters.push_back(std::move(a));
    }
    lib.validate();
    return lib;
}

}  // namespace t2l
