#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "mist/domain.hpp"
#include "mist/rng.hpp"

namespace mist {

/// Single-channel square image in [0,1] tagged with its modality.
struct ModalityImage {
  Domain domain = Domain::T1;
  std::size_t size = 0;
  std::vector<float> pixels;  // size * size, row-major
};

/// Per-pixel tissue parameters shared by all modalities of one subject.
///
/// pd, t1p and t2p drive the contrast transfer functions. `lesion` is the
/// enhancing-blob weight and `fluid` the free-water weight; both are exactly
/// zero away from their structures.
struct TissueMap {
  std::uint64_t seed = 0;
  std::size_t size = 0;
  std::vector<float> pd;
  std::vector<float> t1p;
  std::vector<float> t2p;
  std::vector<float> lesion;
  std::vector<float> fluid;
};

struct StyleParams {
  Domain domain = Domain::T1;
  double gamma_exp = 1.0;    // contrast exponent
  double gain = 1.0;
  double bias_amp = 0.0;     // amplitude of the linear multiplicative bias field
  double noise_sigma = 0.0;
  double bias_angle = 0.0;   // direction of the bias ramp, radians
  std::uint64_t noise_seed = 0;
};

struct Range {
  double lo;
  double hi;
};

/// Sampling ranges for StyleParams.
struct StyleRanges {
  Range gamma_exp{0.6, 1.6};
  Range gain{0.8, 1.2};
  Range bias_amp{0.0, 0.15};
  Range noise_sigma{0.0, 0.02};
};

struct PhantomSample {
  std::uint64_t seed = 0;
  std::optional<TissueMap> tissue;                       // absent for external data
  std::array<ModalityImage, kNumDomains> images;         // indexed by domain
  std::optional<std::array<StyleParams, kNumDomains>> styles;

  const ModalityImage& image(Domain d) const { return images[domain_index(d)]; }
};

struct DatasetSplits {
  std::vector<PhantomSample> train;
  std::vector<PhantomSample> val;
  std::vector<PhantomSample> test;
};

/// Split sizes for a 3:1:1 split: val = test = n / 5, train gets the rest.
struct SplitSizes {
  std::size_t train;
  std::size_t val;
  std::size_t test;
};
SplitSizes split_sizes(std::size_t n);

/// Layered-ellipse head phantom. Deterministic in (seed, size); size >= 16.
TissueMap gen_tissue_map(std::uint64_t seed, std::size_t size);

/// Noise-free, style-free contrast of one domain, before clamping.
std::vector<float> base_contrast(const TissueMap& tissue, Domain domain);

ModalityImage render_modality(const TissueMap& tissue, const StyleParams& style);

StyleParams sample_style_params(Domain domain, Rng& rng, const StyleRanges& ranges = {});

/// n >= 5 subjects, seeds derived per index, split 3:1:1 in index order.
DatasetSplits make_dataset(std::size_t n, std::size_t size, std::uint64_t seed, const StyleRanges& ranges = {});

/// Reads `<dir>/<sample>/{t1,t1c,t2,flair}.pgm`, min-max normalizes each image
/// and zero-pads it symmetrically to size x size. Samples with a missing file
/// are skipped with a warning.
std::vector<PhantomSample> load_external(const std::filesystem::path& dir, std::size_t size);

/// Writes a generated dataset in the gen-data layout (16-bit PGMs, style.json
/// per sample, manifest.json at the root).
void write_dataset(const std::filesystem::path& out, const DatasetSplits& splits, std::size_t n, std::size_t size,
                   std::uint64_t seed);

/// Reads a gen-data directory (manifest.json present) exactly, or falls back
/// to load_external + a 3:1:1 split of the sorted samples.
DatasetSplits read_dataset(const std::filesystem::path& dir, std::size_t size);

}  // namespace mist
