#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "derl/nn.hpp"

namespace derl {

enum class Modality { Text = 0, Visual = 1, Audio = 2 };
constexpr std::array<Modality, 3> kModalities{Modality::Text, Modality::Visual, Modality::Audio};
const char* modality_name(Modality m);

// One sample: per-modality feature sequences with per-token presence masks
// and a scalar sentiment label in [-3, 3].
struct ModalityBundle {
    struct Channel {
        long T = 0;
        long D = 0;
        std::vector<double> features;  // row-major T x D
        std::vector<bool> present;     // length T
    };
    std::array<Channel, 3> channels;
    double label = 0.0;

    Channel& channel(Modality m) { return channels[static_cast<size_t>(m)]; }
    const Channel& channel(Modality m) const { return channels[static_cast<size_t>(m)]; }
    bool pristine() const;
};

struct Dataset {
    std::vector<ModalityBundle> train, valid, test;
    std::array<long, 3> dims{0, 0, 0};
    std::array<long, 3> lengths{0, 0, 0};
    std::string provenance = "synthetic";
    // Planted signal directions, present for synthetic data (one per modality,
    // length D_m) so tests can verify the construction.
    std::array<std::vector<double>, 3> planted_shared;
    std::array<std::vector<double>, 3> planted_direction;

    const std::vector<ModalityBundle>& split(const std::string& name) const;
};

// Corruption request. Intra mode masks a fraction of tokens per modality;
// inter mode removes whole modalities outside the availability subset.
struct MissingSpec {
    enum class Mode { Intra, Inter };
    Mode mode = Mode::Intra;
    // Intra: fixed per-modality rates, or uniform-random per modality when unset.
    std::optional<std::array<double, 3>> rates;
    // Inter: available modalities.
    std::array<bool, 3> available{true, true, true};
    uint64_t seed = 0;

    static MissingSpec intra(double r, uint64_t seed);
    static MissingSpec intra_uniform(uint64_t seed);
    static MissingSpec inter(bool text, bool visual, bool audio, uint64_t seed);
    void validate() const;
};

long round_half_away_from_zero(double x);

// Masks token rows: chosen rows are replaced by the modality's
// substitution vector (zeros by default) and the presence mask is cleared.
// The input must be pristine; re-masking a corrupted bundle is a ContractError.
ModalityBundle random_missing(const ModalityBundle& bundle, const MissingSpec& spec,
                              const std::vector<double>* text_substitution = nullptr);

// Plants a latent sentiment y ~ U[-3,3] into each modality as
// y * direction + N(0, sigma^2) noise per token, where the direction blends a
// cross-modality shared component (weight sqrt(redundancy)) with a private one.
Dataset generate_synthetic(long n, std::array<long, 3> lengths, std::array<long, 3> dims,
                           double redundancy, double noise_sigma, uint64_t seed);

void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& manifest_path);

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace derl
