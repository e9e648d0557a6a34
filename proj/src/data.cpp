#include "rebafl/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "rebafl/errors.hpp"
#include "rebafl/rng.hpp"

namespace rebafl {

namespace {

// zlib's gz* API reads both gzip-compressed and plain files transparently.
class GzFile {
  public:
    explicit GzFile(const std::string& path) : path_(path), f_(gzopen(path.c_str(), "rb")) {
        if (!f_) throw DataError("cannot open " + path);
    }
    ~GzFile() {
        if (f_) gzclose(f_);
    }
    GzFile(const GzFile&) = delete;
    GzFile& operator=(const GzFile&) = delete;

    void read_exact(void* dst, std::size_t len) {
        const int got = gzread(f_, dst, static_cast<unsigned>(len));
        if (got < 0 || static_cast<std::size_t>(got) != len)
            throw DataError(path_ + ": truncated at offset " + std::to_string(offset_) +
                            " (wanted " + std::to_string(len) + " bytes, got " +
                            std::to_string(got < 0 ? 0 : got) + ")");
        offset_ += len;
    }

    std::uint32_t read_u32_be() {
        unsigned char b[4];
        read_exact(b, 4);
        return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
               (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
    }

    bool at_eof() {
        // gzeof only reports after a failed read; probe one byte.
        int c = gzgetc(f_);
        if (c == -1) return true;
        gzungetc(c, f_);
        return false;
    }

  private:
    std::string path_;
    gzFile f_;
    std::size_t offset_ = 0;
};

char hexdigit(unsigned v) { return "0123456789abcdef"[v & 0xf]; }

std::string hex32(std::uint32_t v) {
    std::string s = "0x";
    for (int i = 7; i >= 0; --i) s += hexdigit(v >> (4 * i));
    return s;
}

}  // namespace

Matrix Dataset::gather(std::span<const std::size_t> indices) const {
    Matrix x(indices.size(), dim);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const float* src = values.data() + indices[r] * dim;
        double* dst = x.data.data() + r * dim;
        for (std::size_t c = 0; c < dim; ++c) dst[c] = static_cast<double>(src[c]);
    }
    return x;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
    std::vector<int> out(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) out[r] = labels[indices[r]];
    return out;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    GzFile img(images_path);
    const std::uint32_t magic = img.read_u32_be();
    if (magic != 0x00000803u)
        throw DataError(images_path + ": bad image magic " + hex32(magic) + " at offset 0" +
                        " (expected 0x00000803)");
    const std::uint32_t count = img.read_u32_be();
    const std::uint32_t h = img.read_u32_be();
    const std::uint32_t w = img.read_u32_be();

    GzFile lab(labels_path);
    const std::uint32_t lmagic = lab.read_u32_be();
    if (lmagic != 0x00000801u)
        throw DataError(labels_path + ": bad label magic " + hex32(lmagic) + " at offset 0" +
                        " (expected 0x00000801)");
    const std::uint32_t lcount = lab.read_u32_be();
    if (lcount != count)
        throw DataError(images_path + ": " + std::to_string(count) + " images but " +
                        std::to_string(lcount) + " labels");

    Dataset ds;
    ds.name = "idx";
    ds.num = count;
    ds.channels = 1;
    ds.height = h;
    ds.width = w;
    ds.dim = static_cast<std::size_t>(h) * w;
    ds.values.resize(ds.num * ds.dim);
    ds.labels.resize(ds.num);

    std::vector<unsigned char> raw(ds.dim);
    int max_label = -1;
    for (std::size_t i = 0; i < ds.num; ++i) {
        img.read_exact(raw.data(), ds.dim);
        float* dst = ds.values.data() + i * ds.dim;
        for (std::size_t k = 0; k < ds.dim; ++k) dst[k] = raw[k] / 255.0f;
        unsigned char y;
        lab.read_exact(&y, 1);
        ds.labels[i] = y;
        max_label = std::max(max_label, static_cast<int>(y));
    }
    ds.num_classes = static_cast<std::size_t>(max_label) + 1;
    return ds;
}

Dataset load_cifar10_binary(const std::vector<std::string>& paths) {
    constexpr std::size_t kRecord = 3073;
    constexpr std::size_t kPixels = 3072;
    Dataset ds;
    ds.name = "cifar10";
    ds.channels = 3;
    ds.height = 32;
    ds.width = 32;
    ds.dim = kPixels;
    ds.num_classes = 10;
    for (const std::string& path : paths) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw DataError("cannot open " + path);
        f.seekg(0, std::ios::end);
        const auto size = static_cast<std::size_t>(f.tellg());
        f.seekg(0);
        if (size % kRecord != 0)
            throw DataError(path + ": size " + std::to_string(size) +
                            " is not a multiple of the 3073-byte record");
        const std::size_t records = size / kRecord;
        std::vector<unsigned char> rec(kRecord);
        for (std::size_t r = 0; r < records; ++r) {
            f.read(reinterpret_cast<char*>(rec.data()), kRecord);
            if (!f) throw DataError(path + ": truncated record " + std::to_string(r));
            if (rec[0] > 9)
                throw DataError(path + ": record " + std::to_string(r) + " has label " +
                                std::to_string(rec[0]));
            ds.labels.push_back(rec[0]);
            const std::size_t base = ds.values.size();
            ds.values.resize(base + kPixels);
            for (std::size_t k = 0; k < kPixels; ++k)
                ds.values[base + k] = rec[1 + k] / 255.0f;
        }
        ds.num += records;
    }
    return ds;
}

Dataset make_synthetic(std::size_t classes, std::size_t dim, std::size_t per_class,
                       std::uint64_t seed, double separation) {
    if (classes == 0 || dim == 0 || per_class == 0 || separation <= 0.0)
        throw ConfigError("make_synthetic: all arguments must be positive");
    if (dim < classes)
        throw ConfigError("make_synthetic: dim must be >= classes for equidistant means");
    Dataset ds;
    ds.name = "synthetic";
    ds.num = classes * per_class;
    ds.dim = dim;
    ds.channels = 1;
    ds.height = 1;
    ds.width = dim;
    ds.num_classes = classes;
    ds.values.resize(ds.num * dim);
    ds.labels.resize(ds.num);
    // Means at (separation/sqrt(2)) * e_c are pairwise exactly `separation` apart.
    const double scale = separation / std::sqrt(2.0);
    for (std::size_t c = 0; c < classes; ++c) {
        auto eng = rng::engine(seed, rng::Stream::Synthetic, c);
        std::normal_distribution<double> noise(0.0, 1.0);
        for (std::size_t s = 0; s < per_class; ++s) {
            const std::size_t row = c * per_class + s;
            float* dst = ds.values.data() + row * dim;
            for (std::size_t k = 0; k < dim; ++k) {
                double v = noise(eng);
                if (k == c) v += scale;
                dst[k] = static_cast<float>(v);
            }
            ds.labels[row] = static_cast<int>(c);
        }
    }
    return ds;
}

namespace {

std::vector<std::vector<std::size_t>> class_pools(const Dataset& ds, std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> pools(ds.num_classes);
    for (std::size_t i = 0; i < ds.num; ++i)
        pools[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    for (std::size_t c = 0; c < pools.size(); ++c) {
        auto eng = rng::engine(seed, rng::Stream::Partition, 0, c);
        std::shuffle(pools[c].begin(), pools[c].end(), eng);
    }
    return pools;
}

std::vector<ClientShard> partition_impl(const Dataset& ds, const PartitionSpec& spec,
                                        const std::vector<std::size_t>& n_classes_of_client) {
    if (spec.clients == 0) throw ConfigError("partition: zero clients");
    if (spec.samples_per_client == 0) throw ConfigError("partition: zero samples per client");

    auto pools = class_pools(ds, spec.seed);
    std::vector<std::size_t> used(ds.num_classes, 0);
    std::vector<ClientShard> shards;
    shards.reserve(spec.clients);

    std::vector<int> all_classes(ds.num_classes);
    std::iota(all_classes.begin(), all_classes.end(), 0);

    for (std::size_t i = 0; i < spec.clients; ++i) {
        const std::size_t n_cls = n_classes_of_client[i];
        if (n_cls == 0 || n_cls > ds.num_classes)
            throw ConfigError("partition: client " + std::to_string(i) + " requests " +
                              std::to_string(n_cls) + " classes of " +
                              std::to_string(ds.num_classes));
        if (spec.samples_per_client % n_cls != 0)
            throw ConfigError("partition: samples_per_client " +
                              std::to_string(spec.samples_per_client) +
                              " is not divisible by " + std::to_string(n_cls) + " classes");
        const std::size_t per_class = spec.samples_per_client / n_cls;

        auto eng = rng::engine(spec.seed, rng::Stream::Partition, 1, i);
        std::vector<int> subset;
        std::sample(all_classes.begin(), all_classes.end(), std::back_inserter(subset),
                    static_cast<long>(n_cls), eng);
        std::sort(subset.begin(), subset.end());

        ClientShard shard;
        shard.client_id = static_cast<int>(i);
        shard.label_set = subset;
        for (int cls : subset) {
            const auto c = static_cast<std::size_t>(cls);
            if (used[c] + per_class > pools[c].size())
                throw DataError("partition: class " + std::to_string(cls) + " exhausted at client " +
                                std::to_string(i) + " (need " + std::to_string(per_class) +
                                " more, have " + std::to_string(pools[c].size() - used[c]) + ")");
            shard.indices.insert(shard.indices.end(), pools[c].begin() + used[c],
                                 pools[c].begin() + used[c] + per_class);
            used[c] += per_class;
        }
        shards.push_back(std::move(shard));
    }
    return shards;
}

}  // namespace

std::vector<ClientShard> pathological_partition(const Dataset& ds, const PartitionSpec& spec) {
    std::vector<std::size_t> per_client(spec.clients, spec.classes_per_client);
    return partition_impl(ds, spec, per_client);
}

std::vector<std::size_t> cluster_of_client(const PartitionSpec& spec) {
    std::vector<std::size_t> owner;
    for (std::size_t k = 0; k < spec.clusters.size(); ++k)
        owner.insert(owner.end(), spec.clusters[k].size, k);
    return owner;
}

std::vector<ClientShard> clustered_partition(const Dataset& ds, const PartitionSpec& spec) {
    if (spec.clusters.empty()) throw ConfigError("clustered_partition: no clusters defined");
    std::size_t total = 0;
    for (const ClusterSpec& c : spec.clusters) total += c.size;
    if (total != spec.clients)
        throw ConfigError("clustered_partition: cluster sizes sum to " + std::to_string(total) +
                          " but " + std::to_string(spec.clients) + " clients configured");
    std::vector<std::size_t> per_client;
    per_client.reserve(spec.clients);
    for (const ClusterSpec& c : spec.clusters)
        per_client.insert(per_client.end(), c.size, c.classes_per_client);
    return partition_impl(ds, spec, per_client);
}

Dataset balanced_test_set(const Dataset& ds) {
    if (ds.num_classes == 0 || ds.num == 0) throw DataError("balanced_test_set: empty dataset");
    std::vector<std::size_t> counts(ds.num_classes, 0);
    for (int y : ds.labels) ++counts[static_cast<std::size_t>(y)];
    std::size_t min_count = ds.num;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] == 0)
            throw DataError("balanced_test_set: class " + std::to_string(c) +
                            " has no test samples");
        min_count = std::min(min_count, counts[c]);
    }
    std::vector<std::size_t> taken(ds.num_classes, 0);
    std::vector<std::size_t> keep;
    keep.reserve(min_count * ds.num_classes);
    for (std::size_t i = 0; i < ds.num; ++i) {
        const auto c = static_cast<std::size_t>(ds.labels[i]);
        if (taken[c] < min_count) {
            keep.push_back(i);
            ++taken[c];
        }
    }
    Dataset out;
    out.name = ds.name + "-balanced";
    out.num = keep.size();
    out.dim = ds.dim;
    out.channels = ds.channels;
    out.height = ds.height;
    out.width = ds.width;
    out.num_classes = ds.num_classes;
    out.values.resize(out.num * out.dim);
    out.labels.resize(out.num);
    for (std::size_t r = 0; r < keep.size(); ++r) {
        std::copy_n(ds.values.data() + keep[r] * ds.dim, ds.dim, out.values.data() + r * ds.dim);
        out.labels[r] = ds.labels[keep[r]];
    }
    return out;
}

std::vector<std::int64_t> shard_label_counts(const Dataset& ds, const ClientShard& shard) {
    std::vector<std::int64_t> counts(ds.num_classes, 0);
    for (std::size_t idx : shard.indices) ++counts[static_cast<std::size_t>(ds.labels[idx])];
    return counts;
}

}  // namespace rebafl
