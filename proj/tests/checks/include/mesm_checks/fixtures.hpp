#pragma once

// In-memory datasets with random shapes for tests and checks.

#include <cstdint>
#include <random>

#include "mesm/config.hpp"
#include "mesm/data.hpp"

namespace mesm::checks {

struct RandomShape {
  int min_frames = 3;
  int max_frames = 9;
  int min_words = 2;
  int max_words = 6;
  int min_sentences = 1;
  int max_sentences = 3;
};

/// Videos with normally distributed features, random durations and one
/// random span per query. Every query of every video becomes a sample.
data::Dataset random_dataset(std::mt19937_64& rng, int videos, const RandomShape& shape, int video_dim, int text_dim,
                             int vocab);

/// Small architecture for fast checks: every layer count 1.
RunConfig micro_config(int hidden = 8, int heads = 2, int spans = 3);

}  // namespace mesm::checks
