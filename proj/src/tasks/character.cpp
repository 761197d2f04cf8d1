#include <algorithm>

#include "metaplast/errors.hpp"
#include "metaplast/tasks.hpp"

namespace metaplast::tasks {

void CharacterEpisodeSpec::validate() const {
  if (present_ms == 0) throw ConfigError("character task: present_ms must be positive");
  if (n_phase2 < 2) throw ConfigError("character task: need at least two phase-2 images");
}

CharacterEpisode generate_character_episode(const ImageSet& set, const CharacterEpisodeSpec& spec,
                                            std::mt19937_64& rng) {
  spec.validate();
  if (set.size() < spec.n_phase2) {
    throw DataError("character task: " + std::to_string(set.size()) + " classes, need at least " +
                    std::to_string(spec.n_phase2));
  }
  for (const auto& imgs : set.images) {
    if (imgs.empty()) throw DataError("character task: class without images");
  }
  std::uniform_int_distribution<std::size_t> pick_class(0, set.size() - 1);
  CharacterEpisode ep;
  ep.phase1_class = pick_class(rng);

  // distinct distractor classes, rejection sampled
  std::vector<std::size_t> classes{ep.phase1_class};
  while (classes.size() < spec.n_phase2) {
    const std::size_t c = pick_class(rng);
    if (std::find(classes.begin(), classes.end(), c) == classes.end()) classes.push_back(c);
  }
  std::shuffle(classes.begin(), classes.end(), rng);
  ep.target = static_cast<std::size_t>(std::find(classes.begin(), classes.end(), ep.phase1_class) - classes.begin());
  ep.phase2_classes = classes;

  const auto& own = set.images[ep.phase1_class];
  std::uniform_int_distribution<std::size_t> pick_own(0, own.size() - 1);
  const std::size_t a = pick_own(rng);
  std::size_t b = a;
  if (own.size() > 1) {
    std::uniform_int_distribution<std::size_t> other(0, own.size() - 2);
    b = other(rng);
    if (b >= a) ++b;
  }
  ep.phase1 = &own[a];
  for (std::size_t slot = 0; slot < classes.size(); ++slot) {
    if (slot == ep.target) {
      ep.phase2.push_back(&own[b]);
    } else {
      const auto& imgs = set.images[classes[slot]];
      std::uniform_int_distribution<std::size_t> pick(0, imgs.size() - 1);
      ep.phase2.push_back(&imgs[pick(rng)]);
    }
  }
  return ep;
}

}  // namespace metaplast::tasks
