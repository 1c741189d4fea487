#include "derl/data.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace derl {

namespace fs = std::filesystem;

const char* modality_name(Modality m) {
    switch (m) {
        case Modality::Text: return "t";
        case Modality::Visual: return "v";
        case Modality::Audio: return "a";
    }
    return "?";
}

bool ModalityBundle::pristine() const {
    for (const auto& ch : channels)
        for (bool p : ch.present)
            if (!p) return false;
    return true;
}

const std::vector<ModalityBundle>& Dataset::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "valid") return valid;
    if (name == "test") return test;
    throw ContractError("unknown split '" + name + "'");
}

MissingSpec MissingSpec::intra(double r, uint64_t seed) {
    MissingSpec s;
    s.mode = Mode::Intra;
    s.rates = std::array<double, 3>{r, r, r};
    s.seed = seed;
    return s;
}

MissingSpec MissingSpec::intra_uniform(uint64_t seed) {
    MissingSpec s;
    s.mode = Mode::Intra;
    s.seed = seed;
    return s;
}

MissingSpec MissingSpec::inter(bool text, bool visual, bool audio, uint64_t seed) {
    MissingSpec s;
    s.mode = Mode::Inter;
    s.available = {text, visual, audio};
    s.seed = seed;
    return s;
}

void MissingSpec::validate() const {
    if (mode == Mode::Intra && rates) {
        for (double r : *rates)
            if (r < 0.0 || r > 1.0)
                throw ContractError("missing rate " + std::to_string(r) + " outside [0,1]");
    }
    if (mode == Mode::Inter && !available[0] && !available[1] && !available[2])
        throw ContractError("inter-modal availability subset must be non-empty");
}

long round_half_away_from_zero(double x) {
    return static_cast<long>(x >= 0 ? std::floor(x + 0.5) : std::ceil(x - 0.5));
}

ModalityBundle random_missing(const ModalityBundle& bundle, const MissingSpec& spec,
                              const std::vector<double>* text_substitution) {
    spec.validate();
    if (!bundle.pristine())
        throw ContractError("random_missing: input bundle is already corrupted");
    ModalityBundle out = bundle;
    for (size_t mi = 0; mi < 3; ++mi) {
        auto& ch = out.channels[mi];
        const bool is_text = mi == static_cast<size_t>(Modality::Text);
        auto substitute = [&](long row) {
            for (long j = 0; j < ch.D; ++j)
                ch.features[row * ch.D + j] =
                    is_text && text_substitution ? (*text_substitution)[j] : 0.0;
            ch.present[row] = false;
        };
        if (spec.mode == MissingSpec::Mode::Inter) {
            if (!spec.available[mi])
                for (long t = 0; t < ch.T; ++t) substitute(t);
            continue;
        }
        Rng rng(Rng::mix(spec.seed, mi));
        double r = spec.rates ? (*spec.rates)[mi] : rng.uniform(0.0, 1.0);
        long n_masked = round_half_away_from_zero(r * static_cast<double>(ch.T));
        if (n_masked == 0) continue;
        for (long row : rng.sample_without_replacement(ch.T, n_masked)) substitute(row);
    }
    return out;
}

Dataset generate_synthetic(long n, std::array<long, 3> lengths, std::array<long, 3> dims,
                           double redundancy, double noise_sigma, uint64_t seed) {
    if (n < 1) throw ContractError("generate_synthetic: n must be >= 1");
    for (long d : dims)
        if (d < 2) throw ContractError("generate_synthetic: dims must be >= 2");
    if (redundancy < 0.0 || redundancy > 1.0)
        throw ContractError("generate_synthetic: redundancy outside [0,1]");

    Dataset ds;
    ds.dims = dims;
    ds.lengths = lengths;
    ds.provenance = "synthetic";

    Rng rng(seed);
    long max_d = std::max({dims[0], dims[1], dims[2]});
    // One shared latent direction; each modality sees its first D_m entries.
    std::vector<double> shared_latent(static_cast<size_t>(max_d));
    for (auto& v : shared_latent) v = rng.normal();

    for (size_t mi = 0; mi < 3; ++mi) {
        long d = dims[mi];
        std::vector<double> s(shared_latent.begin(), shared_latent.begin() + d);
        double norm = 0;
        for (double v : s) norm += v * v;
        norm = std::sqrt(norm);
        for (auto& v : s) v /= norm;
        std::vector<double> p(static_cast<size_t>(d));
        for (auto& v : p) v = rng.normal();
        // Orthogonalize the private direction against the shared one so the
        // redundancy split is exact.
        double dot = 0;
        for (long j = 0; j < d; ++j) dot += p[j] * s[j];
        for (long j = 0; j < d; ++j) p[j] -= dot * s[j];
        norm = 0;
        for (double v : p) norm += v * v;
        norm = std::sqrt(norm);
        for (auto& v : p) v /= norm;

        std::vector<double> dir(static_cast<size_t>(d));
        double ws = std::sqrt(redundancy), wp = std::sqrt(1.0 - redundancy);
        for (long j = 0; j < d; ++j) dir[j] = ws * s[j] + wp * p[j];
        ds.planted_shared[mi] = std::move(s);
        ds.planted_direction[mi] = std::move(dir);
    }

    std::vector<ModalityBundle> samples;
    samples.reserve(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) {
        ModalityBundle b;
        b.label = rng.uniform(-3.0, 3.0);
        for (size_t mi = 0; mi < 3; ++mi) {
            auto& ch = b.channels[mi];
            ch.T = lengths[mi];
            ch.D = dims[mi];
            ch.features.resize(static_cast<size_t>(ch.T * ch.D));
            ch.present.assign(static_cast<size_t>(ch.T), true);
            const auto& dir = ds.planted_direction[mi];
            for (long t = 0; t < ch.T; ++t)
                for (long j = 0; j < ch.D; ++j)
                    ch.features[t * ch.D + j] = b.label * dir[j] + rng.normal(0.0, noise_sigma);
        }
        samples.push_back(std::move(b));
    }

    long n_train = round_half_away_from_zero(0.7 * static_cast<double>(n));
    long n_valid = round_half_away_from_zero(0.1 * static_cast<double>(n));
    n_train = std::min(n_train, n);
    n_valid = std::min(n_valid, n - n_train);
    ds.train.assign(samples.begin(), samples.begin() + n_train);
    ds.valid.assign(samples.begin() + n_train, samples.begin() + n_train + n_valid);
    ds.test.assign(samples.begin() + n_train + n_valid, samples.end());
    return ds;
}

namespace {

void write_doubles(const fs::path& path, const std::vector<double>& v) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(const fs::path& path, size_t expected,
                                 const std::string& shape_desc) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw FormatError("missing data file: " + path.string());
    auto bytes = static_cast<size_t>(f.tellg());
    if (bytes != expected * sizeof(double))
        throw FormatError("file " + path.string() + " holds " +
                          std::to_string(bytes / sizeof(double)) + " values, expected " +
                          std::to_string(expected) + " (" + shape_desc + ")");
    f.seekg(0);
    std::vector<double> v(expected);
    f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
    return v;
}

void save_split(const Dataset& ds, const std::vector<ModalityBundle>& split,
                const std::string& name, const fs::path& dir, std::ostream& manifest) {
    manifest << "count_" << name << ": " << split.size() << "\n";
    for (size_t mi = 0; mi < 3; ++mi) {
        std::string fname = name + "_" + modality_name(kModalities[mi]) + ".f64";
        std::vector<double> flat;
        flat.reserve(split.size() * static_cast<size_t>(ds.lengths[mi] * ds.dims[mi]));
        for (const auto& b : split)
            flat.insert(flat.end(), b.channels[mi].features.begin(),
                        b.channels[mi].features.end());
        write_doubles(dir / fname, flat);
        manifest << "file_" << name << "_" << modality_name(kModalities[mi]) << ": " << fname
                 << "\n";
    }
    std::vector<double> labels;
    labels.reserve(split.size());
    for (const auto& b : split) labels.push_back(b.label);
    std::string lname = name + "_labels.f64";
    write_doubles(dir / lname, labels);
    manifest << "file_" << name << "_labels: " << lname << "\n";
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    fs::path root(dir);
    std::ostringstream manifest;
    manifest << "format: derl-dataset-v1\n";
    manifest << "provenance: " << ds.provenance << "\n";
    manifest << "endianness: little\n";
    for (size_t mi = 0; mi < 3; ++mi) {
        manifest << "dim_" << modality_name(kModalities[mi]) << ": " << ds.dims[mi] << "\n";
        manifest << "len_" << modality_name(kModalities[mi]) << ": " << ds.lengths[mi] << "\n";
    }
    save_split(ds, ds.train, "train", root, manifest);
    save_split(ds, ds.valid, "valid", root, manifest);
    save_split(ds, ds.test, "test", root, manifest);
    for (size_t mi = 0; mi < 3; ++mi) {
        if (ds.planted_direction[mi].empty()) continue;
        std::string sname = std::string("planted_shared_") + modality_name(kModalities[mi]) + ".f64";
        std::string dname =
            std::string("planted_direction_") + modality_name(kModalities[mi]) + ".f64";
        write_doubles(root / sname, ds.planted_shared[mi]);
        write_doubles(root / dname, ds.planted_direction[mi]);
        manifest << "file_planted_shared_" << modality_name(kModalities[mi]) << ": " << sname
                 << "\n";
        manifest << "file_planted_direction_" << modality_name(kModalities[mi]) << ": " << dname
                 << "\n";
    }
    std::ofstream mf(root / "manifest.txt");
    mf << manifest.str();
}

Dataset load_dataset(const std::string& manifest_path) {
    fs::path mpath(manifest_path);
    if (fs::is_directory(mpath)) mpath /= "manifest.txt";
    std::ifstream mf(mpath);
    if (!mf) throw FormatError("cannot open manifest: " + mpath.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto pos = line.find(':');
        if (pos == std::string::npos)
            throw FormatError("malformed manifest line: '" + line + "'");
        std::string key = line.substr(0, pos);
        std::string val = line.substr(pos + 1);
        val.erase(0, val.find_first_not_of(" \t"));
        kv[key] = val;
    }
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError("manifest missing key '" + key + "'");
        return it->second;
    };
    if (get("format") != "derl-dataset-v1")
        throw FormatError("unsupported dataset format '" + get("format") + "'");
    if (get("endianness") != "little")
        throw FormatError("unsupported endianness '" + get("endianness") + "'");

    Dataset ds;
    ds.provenance = get("provenance");
    for (size_t mi = 0; mi < 3; ++mi) {
        ds.dims[mi] = std::stol(get(std::string("dim_") + modality_name(kModalities[mi])));
        ds.lengths[mi] = std::stol(get(std::string("len_") + modality_name(kModalities[mi])));
    }
    fs::path dir = mpath.parent_path();

    auto load_split = [&](const std::string& name) {
        long count = std::stol(get("count_" + name));
        std::array<std::vector<double>, 3> feats;
        for (size_t mi = 0; mi < 3; ++mi) {
            long t = ds.lengths[mi], d = ds.dims[mi];
            std::string shape_desc = std::to_string(count) + "x" + std::to_string(t) + "x" +
                                     std::to_string(d) + " float64";
            feats[mi] = read_doubles(
                dir / get("file_" + name + "_" + modality_name(kModalities[mi])),
                static_cast<size_t>(count * t * d), shape_desc);
        }
        std::vector<double> labels =
            read_doubles(dir / get("file_" + name + "_labels"),
                         static_cast<size_t>(count), std::to_string(count) + " float64");
        std::vector<ModalityBundle> split(static_cast<size_t>(count));
        for (long i = 0; i < count; ++i) {
            split[i].label = labels[i];
            for (size_t mi = 0; mi < 3; ++mi) {
                auto& ch = split[i].channels[mi];
                ch.T = ds.lengths[mi];
                ch.D = ds.dims[mi];
                size_t stride = static_cast<size_t>(ch.T * ch.D);
                ch.features.assign(feats[mi].begin() + i * stride,
                                   feats[mi].begin() + (i + 1) * stride);
                ch.present.assign(static_cast<size_t>(ch.T), true);
            }
        }
        return split;
    };
    ds.train = load_split("train");
    ds.valid = load_split("valid");
    ds.test = load_split("test");
    for (size_t mi = 0; mi < 3; ++mi) {
        std::string skey = std::string("file_planted_shared_") + modality_name(kModalities[mi]);
        std::string dkey = std::string("file_planted_direction_") + modality_name(kModalities[mi]);
        if (kv.count(skey))
            ds.planted_shared[mi] = read_doubles(dir / kv[skey],
                                                 static_cast<size_t>(ds.dims[mi]), "direction");
        if (kv.count(dkey))
            ds.planted_direction[mi] = read_doubles(dir / kv[dkey],
                                                    static_cast<size_t>(ds.dims[mi]), "direction");
    }
    return ds;
}

}  // namespace derl
