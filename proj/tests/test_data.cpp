#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "rebafl/data.hpp"
#include "rebafl/errors.hpp"
#include "rebafl/losses.hpp"
#include "rebafl/model.hpp"

using namespace rebafl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("rebafl_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void write_gz(const std::string& path, const std::vector<unsigned char>& bytes) {
    gzFile f = gzopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
}

std::vector<unsigned char> idx_images(std::uint32_t count, std::uint32_t h, std::uint32_t w,
                                      unsigned char fill, std::uint32_t magic = 0x803) {
    std::vector<unsigned char> out;
    put_u32_be(out, magic);
    put_u32_be(out, count);
    put_u32_be(out, h);
    put_u32_be(out, w);
    out.insert(out.end(), static_cast<std::size_t>(count) * h * w, fill);
    return out;
}

std::vector<unsigned char> idx_labels(const std::vector<unsigned char>& labels,
                                      std::uint32_t magic = 0x801) {
    std::vector<unsigned char> out;
    put_u32_be(out, magic);
    put_u32_be(out, static_cast<std::uint32_t>(labels.size()));
    out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

}  // namespace

TEST_CASE("idx loader") {
    TempDir dir;
    SUBCASE("one handcrafted zero image") {
        write_bytes(dir.file("img"), idx_images(1, 28, 28, 0));
        write_bytes(dir.file("lab"), idx_labels({7}));
        Dataset ds = load_idx(dir.file("img"), dir.file("lab"));
        CHECK(ds.num == 1);
        CHECK(ds.height == 28);
        CHECK(ds.width == 28);
        CHECK(ds.dim == 784);
        CHECK(ds.labels[0] == 7);
        for (float v : ds.values) CHECK(v == 0.0f);
    }
    SUBCASE("pixels scale to [0,1]") {
        write_bytes(dir.file("img"), idx_images(1, 2, 2, 255));
        write_bytes(dir.file("lab"), idx_labels({0}));
        Dataset ds = load_idx(dir.file("img"), dir.file("lab"));
        for (float v : ds.values) CHECK(v == 1.0f);
    }
    SUBCASE("gzip-compressed files load transparently") {
        write_gz(dir.file("img.gz"), idx_images(2, 3, 3, 128));
        write_gz(dir.file("lab.gz"), idx_labels({1, 4}));
        Dataset ds = load_idx(dir.file("img.gz"), dir.file("lab.gz"));
        CHECK(ds.num == 2);
        CHECK(ds.labels[1] == 4);
        CHECK(ds.values[0] == doctest::Approx(128.0 / 255.0));
    }
    SUBCASE("wrong magic is a format error naming the offset") {
        write_bytes(dir.file("img"), idx_images(1, 2, 2, 0, 0x802));
        write_bytes(dir.file("lab"), idx_labels({0}));
        CHECK_THROWS_WITH_AS(load_idx(dir.file("img"), dir.file("lab")),
                             doctest::Contains("0x00000802"), DataError);
    }
    SUBCASE("mismatched image/label counts are rejected") {
        write_bytes(dir.file("img"), idx_images(2, 2, 2, 0));
        write_bytes(dir.file("lab"), idx_labels({0}));
        CHECK_THROWS_AS(load_idx(dir.file("img"), dir.file("lab")), DataError);
    }
    SUBCASE("truncated image payload is rejected with an offset") {
        auto img = idx_images(2, 4, 4, 9);
        img.resize(img.size() - 5);
        write_bytes(dir.file("img"), img);
        write_bytes(dir.file("lab"), idx_labels({0, 1}));
        CHECK_THROWS_WITH_AS(load_idx(dir.file("img"), dir.file("lab")),
                             doctest::Contains("truncated"), DataError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_idx(dir.file("nope"), dir.file("nope2")), DataError);
    }
}

TEST_CASE("cifar-10 binary loader") {
    TempDir dir;
    SUBCASE("zero-record file loads as empty") {
        write_bytes(dir.file("batch.bin"), {});
        Dataset ds = load_cifar10_binary({dir.file("batch.bin")});
        CHECK(ds.num == 0);
        CHECK(ds.dim == 3072);
    }
    SUBCASE("malformed length is a format error") {
        std::vector<unsigned char> bad(3073 * 2 + 7, 0);
        write_bytes(dir.file("batch.bin"), bad);
        CHECK_THROWS_AS(load_cifar10_binary({dir.file("batch.bin")}), DataError);
    }
    SUBCASE("records parse label byte plus channel-major pixels") {
        std::vector<unsigned char> rec(3073 * 2, 0);
        rec[0] = 3;
        rec[1] = 255;           // first red pixel of record 0
        rec[3073] = 9;          // label of record 1
        rec[3073 + 3072] = 51;  // last blue pixel of record 1
        write_bytes(dir.file("batch.bin"), rec);
        Dataset ds = load_cifar10_binary({dir.file("batch.bin")});
        CHECK(ds.num == 2);
        CHECK(ds.labels[0] == 3);
        CHECK(ds.labels[1] == 9);
        CHECK(ds.values[0] == 1.0f);
        CHECK(ds.values[2 * 3072 - 1] == doctest::Approx(51.0 / 255.0));
    }
    SUBCASE("multiple files concatenate") {
        std::vector<unsigned char> a(3073, 0), b(3073, 0);
        b[0] = 5;
        write_bytes(dir.file("a.bin"), a);
        write_bytes(dir.file("b.bin"), b);
        Dataset ds = load_cifar10_binary({dir.file("a.bin"), dir.file("b.bin")});
        CHECK(ds.num == 2);
        CHECK(ds.labels[1] == 5);
    }
}

TEST_CASE("synthetic blobs") {
    SUBCASE("same seed reproduces the dataset bit for bit") {
        Dataset a = make_synthetic(4, 8, 10, 77, 3.0);
        Dataset b = make_synthetic(4, 8, 10, 77, 3.0);
        CHECK(a.values == b.values);
        CHECK(a.labels == b.labels);
        Dataset c = make_synthetic(4, 8, 10, 78, 3.0);
        CHECK(a.values != c.values);
    }
    SUBCASE("per-class count and label layout are respected") {
        Dataset ds = make_synthetic(5, 6, 13, 1, 2.0);
        CHECK(ds.num == 65);
        std::vector<int> counts(5, 0);
        for (int y : ds.labels) ++counts[static_cast<std::size_t>(y)];
        for (int c : counts) CHECK(c == 13);
    }
    SUBCASE("wide separation is linearly separable to 99%") {
        Dataset train = make_synthetic(2, 4, 100, 5, 10.0);
        Dataset test = make_synthetic(2, 4, 100, 6, 10.0);
        ModelParams m = make_linear(4, 2, 3);
        std::vector<std::size_t> idx(train.num);
        for (std::size_t i = 0; i < train.num; ++i) idx[i] = i;
        Matrix x = train.gather(idx);
        std::vector<int> y = train.gather_labels(idx);
        for (int step = 0; step < 40; ++step) {
            auto [h, cache] = forward_features(m, x);
            LossResult loss = vanilla_ce(forward_logits(m, h), y);
            sgd_step(m, backward(m, cache, loss.dl_dz), 0.5, 0.0);
        }
        std::size_t correct = 0;
        Matrix xt = test.gather(idx);
        auto [h, cache] = forward_features(m, xt);
        Matrix z = forward_logits(m, h);
        for (std::size_t r = 0; r < z.rows; ++r) {
            const int pred = z(r, 0) >= z(r, 1) ? 0 : 1;
            if (pred == test.labels[r]) ++correct;
        }
        CHECK(static_cast<double>(correct) / 200.0 >= 0.99);
    }
    SUBCASE("argument validation") {
        CHECK_THROWS_AS(make_synthetic(0, 4, 5, 1, 1.0), ConfigError);
        CHECK_THROWS_AS(make_synthetic(4, 2, 5, 1, 1.0), ConfigError);  // dim < classes
        CHECK_THROWS_AS(make_synthetic(4, 8, 5, 1, -1.0), ConfigError);
    }
}

TEST_CASE("pathological partition") {
    Dataset ds = make_synthetic(10, 16, 10000, 3, 3.0);
    PartitionSpec spec;
    spec.mode = PartitionSpec::Mode::Pathological;
    spec.clients = 50;
    spec.classes_per_client = 2;
    spec.samples_per_client = 1000;
    spec.seed = 9;

    SUBCASE("fifty clients, two classes of five hundred each") {
        auto shards = pathological_partition(ds, spec);
        REQUIRE(shards.size() == 50);
        std::set<std::size_t> seen;
        for (const ClientShard& s : shards) {
            CHECK(s.label_set.size() == 2);
            CHECK(s.size() == 1000);
            auto counts = shard_label_counts(ds, s);
            for (int cls : s.label_set)
                CHECK(counts[static_cast<std::size_t>(cls)] == 500);
            for (std::size_t c = 0; c < 10; ++c) {
                const bool in_set = std::find(s.label_set.begin(), s.label_set.end(),
                                              static_cast<int>(c)) != s.label_set.end();
                if (!in_set) CHECK(counts[c] == 0);
            }
            for (std::size_t i : s.indices) {
                // no sample reused across shards
                CHECK(seen.insert(i).second);
            }
        }
    }
    SUBCASE("partition is deterministic in (dataset, spec, seed)") {
        auto a = pathological_partition(ds, spec);
        auto b = pathological_partition(ds, spec);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].indices == b[i].indices);
            CHECK(a[i].label_set == b[i].label_set);
        }
        spec.seed = 10;
        auto c = pathological_partition(ds, spec);
        bool any_diff = false;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i].indices != c[i].indices) any_diff = true;
        CHECK(any_diff);
    }
    SUBCASE("N = C gives a uniform shard histogram") {
        spec.clients = 4;
        spec.classes_per_client = 10;
        spec.samples_per_client = 1000;
        auto shards = pathological_partition(ds, spec);
        for (const ClientShard& s : shards) {
            auto counts = shard_label_counts(ds, s);
            for (std::size_t c = 0; c < 10; ++c) CHECK(counts[c] == 100);
        }
    }
    SUBCASE("insufficient samples name the deficient class") {
        Dataset small = make_synthetic(3, 4, 30, 3, 3.0);
        PartitionSpec tight;
        tight.clients = 5;
        tight.classes_per_client = 3;
        tight.samples_per_client = 60;
        tight.seed = 1;
        CHECK_THROWS_WITH_AS(pathological_partition(small, tight),
                             doctest::Contains("class"), DataError);
    }
    SUBCASE("indivisible samples_per_client is a config error") {
        spec.classes_per_client = 3;
        spec.samples_per_client = 1000;
        CHECK_THROWS_AS(pathological_partition(ds, spec), ConfigError);
    }
}

TEST_CASE("clustered partition") {
    Dataset ds = make_synthetic(10, 16, 8000, 4, 3.0);
    PartitionSpec spec;
    spec.mode = PartitionSpec::Mode::Clustered;
    spec.clients = 20;
    spec.samples_per_client = 1000;
    spec.seed = 11;
    spec.clusters = {{4, 2, 0.5}, {4, 2, 0.5}, {4, 3, 0.3}, {4, 3, 0.3}, {4, 5, 0.2}};

    SUBCASE("five clusters of four with N = {2,2,3,3,5}") {
        auto shards = clustered_partition(ds, spec);
        REQUIRE(shards.size() == 20);
        const std::size_t expect_n[] = {2, 2, 3, 3, 5};
        auto owner = cluster_of_client(spec);
        for (std::size_t i = 0; i < 20; ++i) {
            CHECK(shards[i].label_set.size() == expect_n[owner[i]]);
            CHECK(shards[i].size() == 1000);
            auto counts = shard_label_counts(ds, shards[i]);
            for (int cls : shards[i].label_set)
                CHECK(counts[static_cast<std::size_t>(cls)] ==
                      static_cast<std::int64_t>(1000 / expect_n[owner[i]]));
        }
        // label subsets still vary within a cluster
        bool differs = false;
        for (std::size_t i = 1; i < 4; ++i)
            if (shards[i].label_set != shards[0].label_set) differs = true;
        CHECK(differs);
    }
    SUBCASE("a single cluster over all clients reduces to pathological") {
        PartitionSpec one = spec;
        one.clusters = {{20, 2, 0.5}};
        auto clustered = clustered_partition(ds, one);
        PartitionSpec flat = spec;
        flat.mode = PartitionSpec::Mode::Pathological;
        flat.classes_per_client = 2;
        flat.clusters.clear();
        auto plain = pathological_partition(ds, flat);
        REQUIRE(clustered.size() == plain.size());
        for (std::size_t i = 0; i < clustered.size(); ++i) {
            CHECK(clustered[i].indices == plain[i].indices);
            CHECK(clustered[i].label_set == plain[i].label_set);
        }
    }
    SUBCASE("cluster sizes must sum to the client count") {
        spec.clusters = {{4, 2, 0.5}, {4, 2, 0.5}};
        CHECK_THROWS_AS(clustered_partition(ds, spec), ConfigError);
    }
}

TEST_CASE("balanced test set") {
    SUBCASE("an already balanced set is unchanged") {
        Dataset ds = make_synthetic(4, 4, 25, 13, 3.0);
        Dataset out = balanced_test_set(ds);
        CHECK(out.num == ds.num);
        CHECK(out.labels == ds.labels);
        CHECK(out.values == ds.values);
    }
    SUBCASE("imbalanced classes truncate to the minimum count") {
        Dataset ds = make_synthetic(3, 4, 20, 14, 3.0);
        // keep only 7 samples of class 2
        Dataset skew;
        skew.name = "skew";
        skew.dim = ds.dim;
        skew.channels = ds.channels;
        skew.height = ds.height;
        skew.width = ds.width;
        skew.num_classes = 3;
        int kept2 = 0;
        for (std::size_t i = 0; i < ds.num; ++i) {
            if (ds.labels[i] == 2 && kept2 >= 7) continue;
            if (ds.labels[i] == 2) ++kept2;
            skew.labels.push_back(ds.labels[i]);
            skew.values.insert(skew.values.end(), ds.values.begin() + i * ds.dim,
                               ds.values.begin() + (i + 1) * ds.dim);
            ++skew.num;
        }
        Dataset out = balanced_test_set(skew);
        std::vector<int> counts(3, 0);
        for (int y : out.labels) ++counts[static_cast<std::size_t>(y)];
        CHECK(counts[0] == 7);
        CHECK(counts[1] == 7);
        CHECK(counts[2] == 7);
    }
    SUBCASE("accuracy on a balanced set equals the mean of per-class accuracies") {
        Dataset ds = make_synthetic(5, 8, 40, 15, 2.0);
        ModelParams m = make_linear(8, 5, 21);
        std::vector<std::size_t> idx(ds.num);
        for (std::size_t i = 0; i < ds.num; ++i) idx[i] = i;
        auto [h, cache] = forward_features(m, ds.gather(idx));
        Matrix z = forward_logits(m, h);
        std::vector<double> per_class_correct(5, 0.0);
        std::size_t correct = 0;
        for (std::size_t r = 0; r < z.rows; ++r) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < 5; ++c)
                if (z(r, c) > z(r, best)) best = c;
            if (static_cast<int>(best) == ds.labels[r]) {
                ++correct;
                per_class_correct[static_cast<std::size_t>(ds.labels[r])] += 1.0;
            }
        }
        double stratified = 0.0;
        for (double v : per_class_correct) stratified += v / 40.0;
        stratified /= 5.0;
        CHECK(static_cast<double>(correct) / static_cast<double>(ds.num) ==
              doctest::Approx(stratified).epsilon(1e-12));
    }
    SUBCASE("an absent class is an error") {
        Dataset ds = make_synthetic(3, 4, 5, 16, 3.0);
        ds.num_classes = 4;  // class 3 exists nowhere
        CHECK_THROWS_AS(balanced_test_set(ds), DataError);
    }
}
