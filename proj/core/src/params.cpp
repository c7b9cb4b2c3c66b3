#include "fastadapt/params.hpp"

#include "fastadapt/error.hpp"
#include "fastadapt/linalg.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace fastadapt {

namespace {

constexpr char kMagic[4] = {'F', 'A', 'P', 'S'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
    }
}

void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
    }
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    std::uint64_t u64() { return read<std::uint64_t, 8>(); }
    std::uint32_t u32() { return read<std::uint32_t, 4>(); }

    std::string str(std::size_t n)
    {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    template <typename T, int N>
    T read()
    {
        need(N);
        T v = 0;
        for (int i = 0; i < N; ++i) {
            v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        }
        pos_ += N;
        return v;
    }

    void need(std::size_t n) const
    {
        if (bytes_.size() - pos_ < n) {
            throw IoError("ParamStore: truncated checkpoint");
        }
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

} // namespace

const char* partition_name(Partition p)
{
    return p == Partition::Shared ? "shared" : "task_specific";
}

ComplexMatrix ParamEntry::matrix() const
{
    const Index n = rows * cols;
    RealMatrix re = Eigen::Map<const RealMatrix>(data.data(), rows, cols);
    if (!is_complex) {
        return ComplexMatrix(std::move(re));
    }
    RealMatrix im = Eigen::Map<const RealMatrix>(data.data() + n, rows, cols);
    return ComplexMatrix(std::move(re), std::move(im));
}

void ParamEntry::assign(const ComplexMatrix& m)
{
    if (m.rows() != rows || m.cols() != cols) {
        throw ShapeError("ParamEntry::assign: shape mismatch for '" + name + "'");
    }
    const Index n = rows * cols;
    Eigen::Map<RealMatrix>(data.data(), rows, cols) = m.re();
    if (is_complex) {
        Eigen::Map<RealMatrix>(data.data() + n, rows, cols) = m.im();
    }
}

void ParamStore::add(std::string name, const ComplexMatrix& init, bool is_complex, Partition partition,
                     bool lipschitz_constrained)
{
    if (find(name)) {
        throw ConfigError("ParamStore: duplicate entry '" + name + "'");
    }
    ParamEntry e;
    e.name = std::move(name);
    e.rows = init.rows();
    e.cols = init.cols();
    e.is_complex = is_complex;
    e.partition = partition;
    e.lipschitz_constrained = lipschitz_constrained;
    e.data.assign(static_cast<std::size_t>(init.size() * (is_complex ? 2 : 1)), 0.0);
    e.assign(init);
    entries_.push_back(std::move(e));
}

std::optional<std::size_t> ParamStore::find(const std::string& name) const
{
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) {
            return i;
        }
    }
    return std::nullopt;
}

const ParamEntry& ParamStore::at(const std::string& name) const
{
    const auto i = find(name);
    if (!i) {
        throw ConfigError("ParamStore: no entry named '" + name + "'");
    }
    return entries_[*i];
}

ParamEntry& ParamStore::at(const std::string& name)
{
    const auto i = find(name);
    if (!i) {
        throw ConfigError("ParamStore: no entry named '" + name + "'");
    }
    return entries_[*i];
}

std::size_t ParamStore::scalar_count() const
{
    std::size_t n = 0;
    for (const ParamEntry& e : entries_) {
        n += e.scalar_count();
    }
    return n;
}

std::size_t ParamStore::scalar_count(Partition p) const
{
    std::size_t n = 0;
    for (const ParamEntry& e : entries_) {
        if (e.partition == p) {
            n += e.scalar_count();
        }
    }
    return n;
}

void ParamStore::set_partition(const std::string& name, Partition p)
{
    at(name).partition = p;
}

ParamStore ParamStore::subset(Partition p) const
{
    ParamStore out;
    for (const ParamEntry& e : entries_) {
        if (e.partition == p) {
            out.entries_.push_back(e);
        }
    }
    return out;
}

bool ParamStore::same_layout(const ParamStore& other) const
{
    if (entries_.size() != other.entries_.size()) {
        return false;
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const ParamEntry& a = entries_[i];
        const ParamEntry& b = other.entries_[i];
        if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.is_complex != b.is_complex ||
            a.partition != b.partition || a.lipschitz_constrained != b.lipschitz_constrained) {
            return false;
        }
    }
    return true;
}

std::string ParamStore::serialize() const
{
    std::string out(kMagic, 4);
    put_u32(out, kVersion);
    put_u64(out, entries_.size());
    for (const ParamEntry& e : entries_) {
        put_u64(out, e.name.size());
        out += e.name;
        put_u64(out, static_cast<std::uint64_t>(e.rows));
        put_u64(out, static_cast<std::uint64_t>(e.cols));
        const std::uint32_t flags = (e.is_complex ? 1U : 0U) |
                                    (e.partition == Partition::TaskSpecific ? 2U : 0U) |
                                    (e.lipschitz_constrained ? 4U : 0U);
        put_u32(out, flags);
        put_u64(out, e.data.size());
        for (const double v : e.data) {
            put_u64(out, std::bit_cast<std::uint64_t>(v));
        }
    }
    return out;
}

ParamStore ParamStore::deserialize(const std::string& bytes)
{
    Reader r(bytes);
    if (r.str(4) != std::string(kMagic, 4)) {
        throw IoError("ParamStore: bad checkpoint magic");
    }
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw IoError("ParamStore: unsupported checkpoint version " + std::to_string(version));
    }
    ParamStore store;
    const std::uint64_t count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        ParamEntry e;
        e.name = r.str(r.u64());
        e.rows = static_cast<Index>(r.u64());
        e.cols = static_cast<Index>(r.u64());
        const std::uint32_t flags = r.u32();
        e.is_complex = (flags & 1U) != 0;
        e.partition = (flags & 2U) != 0 ? Partition::TaskSpecific : Partition::Shared;
        e.lipschitz_constrained = (flags & 4U) != 0;
        const std::uint64_t n = r.u64();
        if (n != static_cast<std::uint64_t>(e.rows * e.cols * (e.is_complex ? 2 : 1))) {
            throw IoError("ParamStore: entry '" + e.name + "' has inconsistent size");
        }
        e.data.resize(n);
        for (double& v : e.data) {
            v = std::bit_cast<double>(r.u64());
        }
        if (store.find(e.name)) {
            throw IoError("ParamStore: duplicate entry '" + e.name + "' in checkpoint");
        }
        store.entries_.push_back(std::move(e));
    }
    if (!r.done()) {
        throw IoError("ParamStore: trailing bytes in checkpoint");
    }
    return store;
}

void ParamStore::save(const std::string& path) const
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("ParamStore: cannot open " + path);
    }
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("ParamStore: write failed for " + path);
    }
}

ParamStore ParamStore::load(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("ParamStore: cannot open " + path);
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return deserialize(buf.str());
}

std::vector<ad::Var> bind(ad::Tape& tape, const ParamStore& params, bool trainable)
{
    std::vector<ad::Var> vars;
    vars.reserve(params.size());
    for (const ParamEntry& e : params.entries()) {
        vars.push_back(trainable ? tape.parameter(e.matrix()) : tape.constant(e.matrix()));
    }
    return vars;
}

std::vector<ComplexMatrix> collect_gradients(const ParamStore& params, std::span<const ad::Var> vars,
                                             const ad::Gradients& grads)
{
    if (vars.size() != params.size()) {
        throw ShapeError("collect_gradients: variable count does not match the store");
    }
    std::vector<ComplexMatrix> out;
    out.reserve(vars.size());
    for (std::size_t i = 0; i < vars.size(); ++i) {
        ComplexMatrix g = grads.of(vars[i]);
        if (!params.entry(i).is_complex) {
            g.im().setZero();
        }
        out.push_back(std::move(g));
    }
    return out;
}

ParamStore lipschitz_project(const ParamStore& params, double gamma, int m)
{
    if (!(gamma > 0.0 && gamma < 1.0)) {
        throw ConfigError("lipschitz_project: gamma must lie in (0, 1)");
    }
    if (m < 1) {
        throw ConfigError("lipschitz_project: layer count must be at least 1");
    }
    const double bound = std::pow(gamma, 1.0 / static_cast<double>(m));
    ParamStore out = params;
    for (std::size_t i = 0; i < out.size(); ++i) {
        ParamEntry& e = out.entry(i);
        if (!e.lipschitz_constrained) {
            continue;
        }
        if (e.is_complex) {
            throw ConfigError("lipschitz_project: complex weight '" + e.name + "' is not supported");
        }
        Eigen::Map<RealMatrix> w(e.data.data(), e.rows, e.cols);
        const double norm = linalg::spectral_norm(w);
        if (norm > bound) {
            w *= bound / norm;
        }
    }
    return out;
}

} // namespace fastadapt
