#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "uniclass/errors.hpp"
#include "uniclass/matrix.hpp"
#include "uniclass/metrics.hpp"
#include "uniclass/rng.hpp"

namespace uniclass {

// Labeled vector dataset: a Gaussian mixture standing in for image data.
struct Dataset {
    Mat points;  // M x D
    Partition true_labels;
    std::size_t k_true = 0;

    // generator metadata
    std::uint64_t seed = 0;
    double separation = 0.0;
    double covariance_scale = 1.0;
    bool balanced = true;

    std::size_t count() const { return points.rows; }
    std::size_t dim() const { return points.cols; }
};

// Class means sit at separation * (pairwise-distinct random unit directions);
// points are mean + standard normal noise. Bit-reproducible in the seed.
inline Dataset generate_mixture(std::uint64_t seed, std::size_t k_true, std::size_t dim,
                                std::size_t count, double separation, bool balanced) {
    if (k_true < 2 || count < k_true || dim < 1)
        throw ParameterError("generate_mixture: need count >= k_true >= 2 and dim >= 1");
    if (separation < 0.0) throw ParameterError("generate_mixture: separation must be >= 0");

    SplitMix64 rng = make_stream(seed, streams::kDataGen);
    std::vector<std::vector<double>> directions;
    while (directions.size() < k_true) {
        std::vector<double> dir(dim);
        double norm2 = 0.0;
        for (double& v : dir) {
            v = rng.next_normal();
            norm2 += v * v;
        }
        if (norm2 < 1e-12) continue;
        const double inv = 1.0 / std::sqrt(norm2);
        for (double& v : dir) v *= inv;
        bool distinct = true;
        for (const auto& other : directions) {
            double d2 = 0.0;
            for (std::size_t c = 0; c < dim; ++c) d2 += (dir[c] - other[c]) * (dir[c] - other[c]);
            distinct = distinct && d2 > 1e-9;
        }
        if (distinct || dim == 1) directions.push_back(std::move(dir));
    }

    Dataset ds;
    ds.seed = seed;
    ds.separation = separation;
    ds.balanced = balanced;
    ds.k_true = k_true;
    ds.points = Mat(count, dim);
    ds.true_labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        Label label;
        if (balanced) {
            label = static_cast<Label>(i % k_true);
        } else {
            label = static_cast<Label>(rng.next_below(k_true));
        }
        ds.true_labels[i] = label;
        for (std::size_t c = 0; c < dim; ++c)
            ds.points(i, c) = separation * directions[label][c] + rng.next_normal();
    }
    return ds;
}

enum class AugmentKind { Global, Local };

struct AugmentParams {
    double sigma_global = 0.5;
    double sigma_local = 0.5;
    double keep_fraction = 0.75;  // fraction of coordinates a local view retains
};

// Vector-space stand-in for image augmentation. Global views add isotropic
// Gaussian jitter; local views keep a random coordinate subset (the analogue
// of a crop) and jitter what is left.
inline std::vector<double> augment(std::span<const double> point, AugmentKind kind,
                                   const AugmentParams& params, SplitMix64& rng) {
    std::vector<double> out(point.begin(), point.end());
    if (kind == AugmentKind::Global) {
        for (double& v : out) v += params.sigma_global * rng.next_normal();
        return out;
    }
    const std::size_t dim = out.size();
    const std::size_t keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(params.keep_fraction * static_cast<double>(dim))));
    std::vector<std::size_t> idx(dim);
    for (std::size_t i = 0; i < dim; ++i) idx[i] = i;
    for (std::size_t i = 0; i < keep; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_below(dim - i));
        std::swap(idx[i], idx[j]);
    }
    std::vector<bool> kept(dim, false);
    for (std::size_t i = 0; i < keep; ++i) kept[idx[i]] = true;
    for (std::size_t i = 0; i < dim; ++i) out[i] = kept[i] ? out[i] : 0.0;
    for (double& v : out) v += params.sigma_local * rng.next_normal();
    return out;
}

// FIFO ring of L2-normalized embeddings supporting nearest-neighbor lookup.
// Single writer; the exhaustive scan is the intended implementation at desk
// scale and doubles as the reference for any future index.
class NNQueue {
public:
    NNQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {
        if (capacity == 0 || dim == 0) throw ParameterError("NNQueue: capacity and dim must be positive");
        storage_.reserve(capacity * dim);
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t dim() const { return dim_; }
    std::size_t size() const { return full_ ? capacity_ : storage_.size() / dim_; }
    bool empty() const { return size() == 0; }

    void push(std::span<const double> v) {
        if (v.size() != dim_) throw DimensionError("NNQueue::push: dimension mismatch");
        double norm2 = 0.0;
        for (double x : v) norm2 += x * x;
        if (!(std::abs(std::sqrt(norm2) - 1.0) <= 1e-6))  // NaN-safe
            throw ParameterError("NNQueue::push: vector is not unit-norm");
        if (!full_ && storage_.size() < capacity_ * dim_) {
            storage_.insert(storage_.end(), v.begin(), v.end());
            if (storage_.size() == capacity_ * dim_) {
                full_ = true;
                cursor_ = 0;
            }
            return;
        }
        std::copy(v.begin(), v.end(), storage_.begin() + static_cast<std::ptrdiff_t>(cursor_ * dim_));
        cursor_ = (cursor_ + 1) % capacity_;
    }

    // Element with the highest cosine similarity (dot product on unit
    // vectors); ties resolve to the earliest-inserted element. An empty queue
    // returns the query unchanged (warm-up behavior).
    std::vector<double> nearest(std::span<const double> query) const {
        if (query.size() != dim_) throw DimensionError("NNQueue::nearest: dimension mismatch");
        const std::size_t n = size();
        if (n == 0) return {query.begin(), query.end()};
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_slot = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t slot = full_ ? (cursor_ + i) % capacity_ : i;  // insertion order
            const double* v = &storage_[slot * dim_];
            double dot = 0.0;
            for (std::size_t c = 0; c < dim_; ++c) dot += v[c] * query[c];
            if (dot > best) {
                best = dot;
                best_slot = slot;
            }
        }
        const double* v = &storage_[best_slot * dim_];
        return {v, v + dim_};
    }

private:
    std::size_t capacity_;
    std::size_t dim_;
    std::size_t cursor_ = 0;  // next slot to overwrite once full
    bool full_ = false;
    std::vector<double> storage_;
};

// CSV with header "f0,...,f{D-1},label"; floats printed with 17 significant
// digits so round-trips are exact.
inline void write_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("write_csv: cannot open " + path.string());
    for (std::size_t c = 0; c < ds.dim(); ++c) out << 'f' << c << ',';
    out << "label\n";
    char buf[64];
    for (std::size_t i = 0; i < ds.count(); ++i) {
        for (std::size_t c = 0; c < ds.dim(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", ds.points(i, c));
            out << buf << ',';
        }
        out << ds.true_labels[i] << '\n';
    }
}

inline Dataset read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("read_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("read_csv: empty file");
    std::size_t dim = 0;
    {
        std::istringstream header(line);
        std::string cell;
        while (std::getline(header, cell, ',')) {
            if (cell == "label") break;
            if (cell != "f" + std::to_string(dim))
                throw ConfigError("read_csv: unexpected header column '" + cell + "'");
            ++dim;
        }
    }
    if (dim == 0) throw ConfigError("read_csv: no feature columns");
    std::vector<double> values;
    Partition labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        for (std::size_t c = 0; c < dim; ++c) {
            if (!std::getline(ss, cell, ','))
                throw ConfigError("read_csv: short row at line " + std::to_string(line_no));
            values.push_back(std::stod(cell));
        }
        if (!std::getline(ss, cell, ','))
            throw ConfigError("read_csv: missing label at line " + std::to_string(line_no));
        labels.push_back(static_cast<Label>(std::stoul(cell)));
    }
    Dataset ds;
    ds.points = Mat(labels.size(), dim);
    ds.points.data = std::move(values);
    ds.true_labels = std::move(labels);
    for (Label l : ds.true_labels) ds.k_true = std::max<std::size_t>(ds.k_true, l + 1);
    return ds;
}

}  // namespace uniclass
