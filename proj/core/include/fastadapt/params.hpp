#pragma once

#include "fastadapt/autodiff.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fastadapt {

enum class Partition { Shared, TaskSpecific };

const char* partition_name(Partition p);

/// One named trainable array. Complex entries store the real block followed
/// by the imaginary block, each column-major.
struct ParamEntry {
    std::string name;
    Index rows = 0;
    Index cols = 0;
    bool is_complex = false;
    Partition partition = Partition::Shared;
    /// Weight matrix whose spectral norm is bounded by lipschitz_project.
    bool lipschitz_constrained = false;
    std::vector<double> data;

    std::size_t scalar_count() const { return data.size(); }
    ComplexMatrix matrix() const;
    /// Overwrites the data; the imaginary part is dropped for real entries.
    void assign(const ComplexMatrix& m);

    friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

class ParamStore {
public:
    /// Appends an entry; duplicate names are a ConfigError.
    void add(std::string name, const ComplexMatrix& init, bool is_complex,
             Partition partition = Partition::Shared, bool lipschitz_constrained = false);

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::vector<ParamEntry>& entries() const { return entries_; }
    const ParamEntry& entry(std::size_t i) const { return entries_[i]; }
    ParamEntry& entry(std::size_t i) { return entries_[i]; }

    std::optional<std::size_t> find(const std::string& name) const;
    const ParamEntry& at(const std::string& name) const;
    ParamEntry& at(const std::string& name);

    /// Total number of real scalars.
    std::size_t scalar_count() const;
    std::size_t scalar_count(Partition p) const;

    void set_partition(const std::string& name, Partition p);

    /// Entries of one partition, in store order.
    ParamStore subset(Partition p) const;

    /// Same names, shapes and tags in the same order.
    bool same_layout(const ParamStore& other) const;

    /// Binary checkpoint: "FAPS", version, then per entry name, shape, flags and
    /// little-endian float64 data.
    std::string serialize() const;
    static ParamStore deserialize(const std::string& bytes);
    void save(const std::string& path) const;
    static ParamStore load(const std::string& path);

    friend bool operator==(const ParamStore&, const ParamStore&) = default;

private:
    std::vector<ParamEntry> entries_;
};

/// Puts every entry on the tape, as a parameter node when trainable is true and
/// as a constant otherwise. The result is index-aligned with the store.
std::vector<ad::Var> bind(ad::Tape& tape, const ParamStore& params, bool trainable = true);

/// Adjoints of bound parameters, index-aligned with the store. Real entries
/// keep only the real part of their adjoint.
std::vector<ComplexMatrix> collect_gradients(const ParamStore& params, std::span<const ad::Var> vars,
                                             const ad::Gradients& grads);

/// Rescales every lipschitz_constrained entry so its spectral norm is at most
/// gamma^(1/m). Requires 0 < gamma < 1.
ParamStore lipschitz_project(const ParamStore& params, double gamma, int m = 2);

} // namespace fastadapt
