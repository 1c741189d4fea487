#include "derl/serialize.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace derl {

namespace {

constexpr char kMagic[8] = {'D', 'E', 'R', 'L', 'M', 'D', 'L', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw FormatError("model file truncated while reading " + what);
    return v;
}

}  // namespace

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string model_config_text(const ModelConfig& c) {
    std::ostringstream os;
    os << "dim=" << c.dim << "\n"
       << "bottleneck=" << c.bottleneck << "\n"
       << "unified_depth=" << c.unified_depth << "\n"
       << "fusion_depth=" << c.fusion_depth << "\n"
       << "heads=" << c.heads << "\n"
       << "k_private=" << c.k_private << "\n"
       << "k_shared=" << c.k_shared << "\n"
       << "expert_hidden=" << c.expert_hidden << "\n"
       << "recon_hidden=" << c.recon_hidden << "\n"
       << "head_hidden=" << c.head_hidden << "\n"
       << "input_dim_t=" << c.input_dims[0] << "\n"
       << "input_dim_v=" << c.input_dims[1] << "\n"
       << "input_dim_a=" << c.input_dims[2] << "\n"
       << "max_len_t=" << c.max_lengths[0] << "\n"
       << "max_len_v=" << c.max_lengths[1] << "\n"
       << "max_len_a=" << c.max_lengths[2] << "\n"
       << "abs_cosine=" << (c.abs_cosine ? 1 : 0) << "\n"
       << "detach_targets=" << (c.detach_targets ? 1 : 0) << "\n"
       << "weight_task=" << c.weight_task << "\n"
       << "weight_dec=" << c.weight_dec << "\n"
       << "weight_rec=" << c.weight_rec << "\n"
       << "use_hed=" << (c.use_hed ? 1 : 0) << "\n"
       << "use_mlcr=" << (c.use_mlcr ? 1 : 0) << "\n"
       << "recon_level1=" << (c.recon_level1 ? 1 : 0) << "\n"
       << "recon_level2=" << (c.recon_level2 ? 1 : 0) << "\n"
       << "recon_level3=" << (c.recon_level3 ? 1 : 0) << "\n"
       << "use_mrf=" << (c.use_mrf ? 1 : 0) << "\n";
    return os.str();
}

ModelConfig model_config_from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto pos = line.find('=');
        if (pos == std::string::npos) throw FormatError("bad config line '" + line + "'");
        kv[line.substr(0, pos)] = line.substr(pos + 1);
    }
    auto geti = [&](const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw FormatError("config missing key '" + k + "'");
        return std::stol(it->second);
    };
    auto getd = [&](const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw FormatError("config missing key '" + k + "'");
        return std::stod(it->second);
    };
    ModelConfig c;
    c.dim = geti("dim");
    c.bottleneck = geti("bottleneck");
    c.unified_depth = static_cast<int>(geti("unified_depth"));
    c.fusion_depth = static_cast<int>(geti("fusion_depth"));
    c.heads = static_cast<int>(geti("heads"));
    c.k_private = geti("k_private");
    c.k_shared = geti("k_shared");
    c.expert_hidden = geti("expert_hidden");
    c.recon_hidden = geti("recon_hidden");
    c.head_hidden = geti("head_hidden");
    c.input_dims = {geti("input_dim_t"), geti("input_dim_v"), geti("input_dim_a")};
    c.max_lengths = {geti("max_len_t"), geti("max_len_v"), geti("max_len_a")};
    c.abs_cosine = geti("abs_cosine") != 0;
    c.detach_targets = geti("detach_targets") != 0;
    c.weight_task = getd("weight_task");
    c.weight_dec = getd("weight_dec");
    c.weight_rec = getd("weight_rec");
    c.use_hed = geti("use_hed") != 0;
    c.use_mlcr = geti("use_mlcr") != 0;
    c.recon_level1 = geti("recon_level1") != 0;
    c.recon_level2 = geti("recon_level2") != 0;
    c.recon_level3 = geti("recon_level3") != 0;
    c.use_mrf = geti("use_mrf") != 0;
    return c;
}

void save_model(const DerlModel& model, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open model file for writing: " + path);
    f.write(kMagic, sizeof kMagic);
    std::string cfg = model_config_text(model.config());
    write_pod<uint64_t>(f, fnv1a(cfg));
    write_pod<uint32_t>(f, static_cast<uint32_t>(cfg.size()));
    f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    write_pod<uint64_t>(f, model.params().items().size());
    for (const auto& [name, t] : model.params().items()) {
        write_pod<uint32_t>(f, static_cast<uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<uint32_t>(f, static_cast<uint32_t>(t.shape().size()));
        for (long e : t.shape()) write_pod<uint64_t>(f, static_cast<uint64_t>(e));
        f.write(reinterpret_cast<const char*>(t.data().data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
}

std::unique_ptr<DerlModel> load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open model file: " + path);
    char magic[8];
    f.read(magic, sizeof magic);
    if (!f || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw FormatError("bad model file header in " + path);
    uint64_t hash = read_pod<uint64_t>(f, "config hash");
    uint32_t cfg_len = read_pod<uint32_t>(f, "config length");
    std::string cfg_text(cfg_len, '\0');
    f.read(cfg_text.data(), cfg_len);
    if (!f) throw FormatError("model file truncated while reading config");
    if (fnv1a(cfg_text) != hash)
        throw FormatError("config hash mismatch in " + path + "; file is corrupt");

    ModelConfig cfg = model_config_from_text(cfg_text);
    auto model = std::make_unique<DerlModel>(cfg, 0);
    uint64_t n = read_pod<uint64_t>(f, "tensor count");
    if (n != model->params().items().size())
        throw FormatError("model file holds " + std::to_string(n) + " tensors, architecture has " +
                          std::to_string(model->params().items().size()));
    for (uint64_t i = 0; i < n; ++i) {
        uint32_t name_len = read_pod<uint32_t>(f, "tensor name length");
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        uint32_t rank = read_pod<uint32_t>(f, "tensor rank");
        Shape shape;
        for (uint32_t r = 0; r < rank; ++r)
            shape.push_back(static_cast<long>(read_pod<uint64_t>(f, "tensor extent")));
        const auto& [expected_name, t] = model->params().items()[i];
        if (name != expected_name || shape != t.shape())
            throw FormatError("tensor mismatch at slot " + std::to_string(i) + ": file has '" +
                              name + "' " + shape_str(shape) + ", architecture expects '" +
                              expected_name + "' " + shape_str(t.shape()));
        Tensor dst = t;
        f.read(reinterpret_cast<char*>(dst.data_mut().data()),
               static_cast<std::streamsize>(dst.numel() * sizeof(double)));
        if (!f) throw FormatError("model file truncated in tensor '" + name + "'");
    }
    return model;
}

}  // namespace derl
