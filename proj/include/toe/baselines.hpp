#pragma once

// Comparison mask producers and the exhaustive-enumeration oracle.

#include <string>
#include <vector>

#include "toe/search.hpp"

namespace toe {

enum class RankingPool {
  global,        // raw selector scores pooled across streams
  znorm,         // scores z-normalized within each stream, then pooled
  per_modality,  // budget split between streams in proportion to valid units
};
const char* to_string(RankingPool p);
RankingPool ranking_pool_from_string(const std::string& s);

/// Top-k units by selector score; ties go to hours before chunks, then the
/// lower index.
MaskPair topk_ranking_mask(const ModelBundle& b, const Instance& inst, int k,
                           RankingPool pool = RankingPool::global);

/// Uniform k-subset of the valid units. Throws ValidationError if k exceeds them.
MaskPair random_mask(const Instance& inst, int k, std::uint64_t seed);

/// |d(l_ts + l_note) / dm_i| at m = 1 for each hour and present chunk
/// (padding chunks are 0).
struct SaliencyScores {
  Vector ts;
  Vector note;
};
SaliencyScores saliency_scores(const ModelBundle& b, const Instance& inst);

/// Valid units by descending saliency, ties as in topk_ranking_mask.
std::vector<UnitRef> saliency_rank(const ModelBundle& b, const Instance& inst);
MaskPair saliency_mask(const ModelBundle& b, const Instance& inst, int k);

inline constexpr int kOracleMaxCandidates = 14;

struct OracleResult {
  MaskPair mask;
  SearchState state;
  long enumerated = 0;
};

/// Best state over every candidate subset with k_min <= K <= k_max, ordered
/// as in the beam. Throws ValidationError("instance too large for oracle")
/// above kOracleMaxCandidates candidates.
OracleResult exhaustive_best(const ModelBundle& b, const Instance& inst, int k_max, const SearchConfig& cfg,
                             int k_min = 1);

}  // namespace toe
