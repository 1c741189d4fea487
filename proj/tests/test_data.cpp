#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "derl/data.hpp"

using namespace derl;
namespace fs = std::filesystem;

namespace {

ModalityBundle make_bundle(long T, long D, double label, uint64_t seed) {
    Rng rng(seed);
    ModalityBundle b;
    b.label = label;
    for (auto& ch : b.channels) {
        ch.T = T;
        ch.D = D;
        ch.features.resize(static_cast<size_t>(T * D));
        for (auto& v : ch.features) v = rng.normal();
        ch.present.assign(static_cast<size_t>(T), true);
    }
    return b;
}

long masked_count(const ModalityBundle& b, Modality m) {
    long n = 0;
    for (bool p : b.channel(m).present)
        if (!p) ++n;
    return n;
}

// Ordinary least squares via normal equations; oracle for the synthetic
// generator's learnability claim.
std::vector<double> ols_fit(const std::vector<std::vector<double>>& X,
                            const std::vector<double>& y) {
    size_t n = X.size(), d = X[0].size() + 1;  // with intercept
    std::vector<std::vector<double>> a(d, std::vector<double>(d + 1, 0.0));
    for (size_t i = 0; i < n; ++i) {
        std::vector<double> row(d, 1.0);
        for (size_t j = 0; j + 1 < d; ++j) row[j + 1] = X[i][j];
        for (size_t r = 0; r < d; ++r) {
            for (size_t c = 0; c < d; ++c) a[r][c] += row[r] * row[c];
            a[r][d] += row[r] * y[i];
        }
    }
    for (size_t r = 0; r < d; ++r) a[r][r] += 1e-8;  // ridge jitter
    for (size_t col = 0; col < d; ++col) {
        size_t piv = col;
        for (size_t r = col + 1; r < d; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        for (size_t r = 0; r < d; ++r) {
            if (r == col) continue;
            double f = a[r][col] / a[col][col];
            for (size_t c = col; c <= d; ++c) a[r][c] -= f * a[col][c];
        }
    }
    std::vector<double> beta(d);
    for (size_t r = 0; r < d; ++r) beta[r] = a[r][d] / a[r][r];
    return beta;
}

std::vector<double> pooled_features(const ModalityBundle& b) {
    std::vector<double> out;
    for (const auto& ch : b.channels)
        for (long j = 0; j < ch.D; ++j) {
            double s = 0;
            for (long t = 0; t < ch.T; ++t) s += ch.features[t * ch.D + j];
            out.push_back(s / ch.T);
        }
    return out;
}

}  // namespace

TEST_CASE("round_half_away_from_zero") {
    CHECK(round_half_away_from_zero(2.0) == 2);
    CHECK(round_half_away_from_zero(2.5) == 3);
    CHECK(round_half_away_from_zero(3.6) == 4);
    CHECK(round_half_away_from_zero(-2.5) == -3);
    CHECK(round_half_away_from_zero(0.0) == 0);
}

TEST_CASE("intra masking counts follow the rounding rule") {
    ModalityBundle b = make_bundle(4, 3, 0.5, 1);
    ModalityBundle half = random_missing(b, MissingSpec::intra(0.5, 9));
    for (Modality m : kModalities) CHECK(masked_count(half, m) == 2);

    ModalityBundle none = random_missing(b, MissingSpec::intra(0.0, 9));
    for (Modality m : kModalities) CHECK(masked_count(none, m) == 0);
    CHECK(none.pristine());
    for (size_t mi = 0; mi < 3; ++mi)
        CHECK(none.channels[mi].features == b.channels[mi].features);

    // round(0.9 * 4) = round(3.6) = 4
    ModalityBundle most = random_missing(b, MissingSpec::intra(0.9, 9));
    for (Modality m : kModalities) CHECK(masked_count(most, m) == 4);
}

TEST_CASE("masked count matches the formula on the full grid") {
    for (int ri = 0; ri <= 10; ++ri) {
        double r = ri / 10.0;
        for (long T = 1; T <= 64; ++T) {
            ModalityBundle b = make_bundle(T, 2, 0.0, 3);
            ModalityBundle c = random_missing(b, MissingSpec::intra(r, 5));
            long expected = round_half_away_from_zero(r * static_cast<double>(T));
            for (Modality m : kModalities) {
                INFO("r=", r, " T=", T);
                CHECK(masked_count(c, m) == expected);
            }
        }
    }
}

TEST_CASE("masked rows are substituted and flagged") {
    ModalityBundle b = make_bundle(6, 4, 1.0, 2);
    std::vector<double> unk(4, 7.5);
    ModalityBundle c = random_missing(b, MissingSpec::intra(0.5, 13), &unk);
    for (size_t mi = 0; mi < 3; ++mi) {
        const auto& ch = c.channels[mi];
        for (long t = 0; t < ch.T; ++t) {
            if (ch.present[t]) continue;
            double expected = mi == 0 ? 7.5 : 0.0;  // text uses the UNK vector
            for (long j = 0; j < ch.D; ++j) CHECK(ch.features[t * ch.D + j] == expected);
        }
    }
    CHECK(c.label == b.label);
    for (size_t mi = 0; mi < 3; ++mi) CHECK(c.channels[mi].T == b.channels[mi].T);
}

TEST_CASE("inter mode wipes unavailable modalities") {
    ModalityBundle b = make_bundle(5, 3, -1.0, 8);
    ModalityBundle c = random_missing(b, MissingSpec::inter(true, false, false, 0));
    CHECK(c.channel(Modality::Text).features == b.channel(Modality::Text).features);
    for (Modality m : {Modality::Visual, Modality::Audio}) {
        CHECK(masked_count(c, m) == 5);
        for (double v : c.channel(m).features) CHECK(v == 0.0);
    }
    CHECK_THROWS_AS(random_missing(b, MissingSpec::inter(false, false, false, 0)),
                    ContractError);
}

TEST_CASE("re-masking a corrupted bundle is rejected") {
    ModalityBundle b = make_bundle(4, 3, 0.0, 4);
    ModalityBundle c = random_missing(b, MissingSpec::intra(0.5, 1));
    CHECK_THROWS_AS(random_missing(c, MissingSpec::intra(0.5, 2)), ContractError);
}

TEST_CASE("corruption is seed-reproducible and seed-sensitive") {
    ModalityBundle b = make_bundle(8, 4, 0.0, 6);
    ModalityBundle c1 = random_missing(b, MissingSpec::intra(0.5, 77));
    ModalityBundle c2 = random_missing(b, MissingSpec::intra(0.5, 77));
    for (size_t mi = 0; mi < 3; ++mi) {
        CHECK(c1.channels[mi].features == c2.channels[mi].features);
        CHECK(c1.channels[mi].present == c2.channels[mi].present);
    }

    // Across 1000 seed pairs, index sets should differ almost always.
    int differ = 0;
    for (uint64_t s = 0; s < 1000; ++s) {
        ModalityBundle a = random_missing(b, MissingSpec::intra(0.5, Rng::mix(s, 1)));
        ModalityBundle d = random_missing(b, MissingSpec::intra(0.5, Rng::mix(s, 2)));
        if (a.channel(Modality::Text).present != d.channel(Modality::Text).present) ++differ;
    }
    // With T=8 and r=0.5 there are only C(8,4)=70 masks per modality, so a
    // few collisions across seeds are expected.
    CHECK(differ >= 950);
}

TEST_CASE("synthetic generator basics") {
    Dataset ds = generate_synthetic(512, {8, 8, 8}, {16, 16, 16}, 0.5, 0.3, 123);
    CHECK(ds.train.size() == 358);
    CHECK(ds.valid.size() == 51);
    CHECK(ds.test.size() == 103);
    for (const auto& b : ds.test) {
        CHECK(b.label >= -3.0);
        CHECK(b.label <= 3.0);
        CHECK(b.pristine());
    }
    // Determinism.
    Dataset ds2 = generate_synthetic(512, {8, 8, 8}, {16, 16, 16}, 0.5, 0.3, 123);
    CHECK(ds.train[0].channels[0].features == ds2.train[0].channels[0].features);

    CHECK_THROWS_AS(generate_synthetic(0, {8, 8, 8}, {16, 16, 16}, 0.5, 0.3, 1), ContractError);
    CHECK_THROWS_AS(generate_synthetic(4, {8, 8, 8}, {1, 16, 16}, 0.5, 0.3, 1), ContractError);
}

TEST_CASE("redundancy one plants parallel directions") {
    Dataset ds = generate_synthetic(4, {4, 4, 4}, {12, 12, 12}, 1.0, 0.1, 5);
    for (size_t a = 0; a < 3; ++a)
        for (size_t b = a + 1; b < 3; ++b) {
            double dot = 0, na = 0, nb = 0;
            for (long j = 0; j < 12; ++j) {
                dot += ds.planted_direction[a][j] * ds.planted_direction[b][j];
                na += ds.planted_direction[a][j] * ds.planted_direction[a][j];
                nb += ds.planted_direction[b][j] * ds.planted_direction[b][j];
            }
            CHECK(dot / std::sqrt(na * nb) == doctest::Approx(1.0).epsilon(1e-9));
        }
}

TEST_CASE("linear oracle recovers the planted signal") {
    Dataset ds = generate_synthetic(512, {8, 8, 8}, {16, 16, 16}, 0.5, 0.3, 99);
    std::vector<std::vector<double>> X;
    std::vector<double> y;
    for (const auto& b : ds.train) {
        X.push_back(pooled_features(b));
        y.push_back(b.label);
    }
    std::vector<double> beta = ols_fit(X, y);
    double mae = 0;
    for (const auto& b : ds.test) {
        std::vector<double> f = pooled_features(b);
        double pred = beta[0];
        for (size_t j = 0; j < f.size(); ++j) pred += beta[j + 1] * f[j];
        mae += std::abs(pred - b.label);
    }
    mae /= static_cast<double>(ds.test.size());
    CHECK(mae < 0.5);
}

TEST_CASE("dataset save/load round trip is bit exact") {
    fs::path dir = fs::temp_directory_path() / "derl_test_ds";
    fs::remove_all(dir);
    Dataset ds = generate_synthetic(32, {4, 6, 5}, {8, 10, 6}, 0.5, 0.3, 7);
    save_dataset(ds, dir.string());
    Dataset back = load_dataset(dir.string());
    CHECK(back.train.size() == ds.train.size());
    CHECK(back.dims == ds.dims);
    CHECK(back.lengths == ds.lengths);
    for (size_t i = 0; i < ds.train.size(); ++i) {
        CHECK(back.train[i].label == ds.train[i].label);
        for (size_t mi = 0; mi < 3; ++mi)
            CHECK(back.train[i].channels[mi].features == ds.train[i].channels[mi].features);
    }
    CHECK(back.planted_direction[0] == ds.planted_direction[0]);
    fs::remove_all(dir);
}

TEST_CASE("manifest dimension mismatch raises a format error naming the file") {
    fs::path dir = fs::temp_directory_path() / "derl_test_badds";
    fs::remove_all(dir);
    Dataset ds = generate_synthetic(8, {4, 4, 4}, {16, 8, 8}, 0.5, 0.3, 7);
    save_dataset(ds, dir.string());
    // Corrupt the declared text dim.
    fs::path mpath = dir / "manifest.txt";
    std::ifstream in(mpath);
    std::string content((std::istreambuf_iterator<char>(in)), {});
    in.close();
    auto pos = content.find("dim_t: 16");
    REQUIRE(pos != std::string::npos);
    content.replace(pos, 9, "dim_t: 17");
    std::ofstream(mpath) << content;
    try {
        load_dataset(dir.string());
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        std::string msg = e.what();
        CHECK(msg.find("train_t.f64") != std::string::npos);
        CHECK(msg.find("17") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("MOSI-shaped dataset loads unchanged") {
    fs::path dir = fs::temp_directory_path() / "derl_test_mosi";
    fs::remove_all(dir);
    // Text 768-d, visual 20-d, audio 5-d, as extracted by standard toolchains.
    Dataset ds = generate_synthetic(6, {10, 12, 12}, {768, 20, 5}, 0.5, 0.3, 7);
    ds.provenance = "external";
    save_dataset(ds, dir.string());
    Dataset back = load_dataset(dir.string());
    CHECK(back.dims == std::array<long, 3>{768, 20, 5});
    CHECK(back.provenance == "external");
    fs::remove_all(dir);
}
