#pragma once

// Episode generators for the two experiments and image-dataset ingestion.
//
// Cue association: 20 sensory neurons in four logical groups of five (right
// cues, left cues, decision, noise), scrambled per episode by a random
// permutation. Character recognition: one phase-1 image followed by five
// phase-2 images, exactly one of which shares the phase-1 class.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "metaplast/autodiff/ops.hpp"

namespace metaplast::tasks {

// ------------------------------------------------------------------- cue task

enum class Side : std::uint8_t { Right = 0, Left = 1 };

const char* to_string(Side s);

struct CueEpisodeSpec {
  std::size_t n_sensory = 20;
  std::size_t group_size = 5;
  double p_active = 0.75;
  double p_background = 0.15;
  std::size_t cue_duration = 25;
  std::size_t inter_cue_gap = 30;
  std::size_t pre_decision_gap = 50;
  std::size_t decision_duration = 25;
  std::size_t n_cues = 5;  // M
  std::size_t n_shot = 1;  // training trials per class in many-shot mode

  // M (cue + gap) + pre-decision gap + decision; the gap follows every cue.
  std::size_t trial_length() const;
  void validate() const;
};

// perm[k] is the sensory neuron carrying logical channel k. Channels
// [0, 5) right cues, [5, 10) left cues, [10, 15) decision, [15, 20) noise.
using Permutation = std::vector<std::size_t>;

Permutation sample_permutation(std::mt19937_64& rng, std::size_t n = 20);

struct CueTrial {
  std::size_t steps = 0;
  std::size_t n_sensory = 0;
  std::vector<std::uint8_t> raster;  // steps x n_sensory, row-major
  std::vector<double> feedback;      // steps x 2; [0] right, [1] left
  Side label = Side::Right;
  bool is_test = false;
  std::vector<Side> cue_sides;
  std::size_t decision_begin = 0;  // within the trial
  std::size_t decision_end = 0;

  std::uint8_t spike(std::size_t t, std::size_t i) const { return raster[t * n_sensory + i]; }
};

CueTrial generate_cue_trial(const Permutation& perm, Side side, const CueEpisodeSpec& spec, std::mt19937_64& rng,
                            bool training);

struct CueEpisode {
  Permutation permutation;
  std::vector<CueTrial> trials;  // training trials first, test trial last
  std::size_t eval_begin = 0;    // decision window of the test trial, in episode steps
  std::size_t eval_end = 0;

  std::size_t total_steps() const;
  const CueTrial& test_trial() const { return trials.back(); }
};

CueEpisode build_cue_episode(const CueEpisodeSpec& spec, bool one_shot, std::mt19937_64& rng);

// Standard two-class BCE, -sum_i [y_i log p_i + (1 - y_i) log(1 - p_i)].
// Throws DomainError when any p_i is outside (0, 1).
ad::Value meta_loss_bce(ad::Value p, const std::array<double, 2>& y);
double meta_loss_bce(const std::array<double, 2>& p, const std::array<double, 2>& y);

std::array<double, 2> one_hot(Side s);

// Logistic of the two scores, clamped to [1e-7, 1 - 1e-7], then BCE.
ad::Value cue_loss_from_scores(ad::Value scores, Side label);

// Right when its score is strictly larger; ties go left.
Side decide(double score_right, double score_left);

// ------------------------------------------------------------------- datasets

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;  // row-major, [0, 1], background 0

  float at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
};

// 8-bit binary PGM (P5). Throws DataError naming the file on anything else.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& gray);

// Bilinear resize to size x size and inversion, so a white page maps to 0.
GrayImage normalize_image(const GrayImage& raw, std::size_t size = 28);

// Quarter turns counter-clockwise.
GrayImage rotate90(const GrayImage& img, int quarter_turns);

struct DatasetIndex {
  struct Class {
    std::string id;
    std::vector<std::filesystem::path> paths;
    int rotation = 0;  // quarter turns applied on load
  };
  std::vector<Class> classes;
  std::string split = "all";
};

// Manifest: one "<class-id> <relative-path>" per line; blank lines and lines
// starting with '#' are ignored. Paths are resolved against the manifest's
// directory.
DatasetIndex load_dataset_manifest(const std::filesystem::path& manifest);

// Each class becomes four, rotated by 0, 90, 180 and 270 degrees; the rotation
// is appended to the id as "@rot90" etc.
DatasetIndex augment_rotations(const DatasetIndex& idx);

// Class-level split; the test side gets floor(n * test_frac) classes.
std::pair<DatasetIndex, DatasetIndex> split_train_test(const DatasetIndex& idx, double test_frac,
                                                       std::mt19937_64& rng);

// Decoded, normalized images of an index, held in memory.
struct ImageSet {
  std::vector<std::string> class_ids;
  std::vector<std::vector<GrayImage>> images;

  std::size_t size() const { return images.size(); }
};

ImageSet load_images(const DatasetIndex& idx, std::size_t size = 28);

// ------------------------------------------------------------ character task

struct CharacterEpisodeSpec {
  std::size_t present_ms = 20;
  std::size_t n_phase2 = 5;

  std::size_t length() const { return present_ms * (1 + n_phase2); }
  void validate() const;
};

struct CharacterEpisode {
  const GrayImage* phase1 = nullptr;
  std::vector<const GrayImage*> phase2;
  std::size_t phase1_class = 0;
  std::vector<std::size_t> phase2_classes;
  std::size_t target = 0;  // slot of the matching image
};

CharacterEpisode generate_character_episode(const ImageSet& set, const CharacterEpisodeSpec& spec,
                                            std::mt19937_64& rng);

// --------------------------------------------------------------------- debug

// "step,neuron,spike" rows for every step and sensory neuron of the episode.
void write_raster_csv(std::ostream& os, const CueEpisode& ep);

// ---------------------------------------------------------- synthetic glyphs

struct GlyphSetSpec {
  std::size_t n_classes = 200;
  std::size_t samples_per_class = 20;
  std::size_t image_size = 105;
  std::uint64_t seed = 1;
};

// Writes class prototypes made of random pen strokes, drawn with per-sample
// jitter, as 8-bit PGM files plus "manifest.txt" under `dir`.
void make_glyph_dataset(const std::filesystem::path& dir, const GlyphSetSpec& spec);

}  // namespace metaplast::tasks
