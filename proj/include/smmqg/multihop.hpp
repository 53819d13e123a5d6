#pragma once

#include <string>
#include <utility>
#include <vector>

#include "smmqg/pipeline.hpp"

namespace smmqg {

enum class IntermediateKind { AboutEntity, EntityAsAnswer };

struct IntermediateQa {
    std::string question;
    std::string answer;
    std::vector<std::string> source_ids;
    IntermediateKind kind = IntermediateKind::AboutEntity;
};

/// Candidates for one intermediate question and the sources it must use.
struct CandidatePool {
    std::vector<Source> sources;
    ModalityRequirement requirement;
};

/// Cross-modal requirements split by modality (text before table before
/// image); unimodal ones are split at random into two nonempty pools.
std::pair<CandidatePool, CandidatePool> split_candidates(const CandidateSet& cand, Rng& rng);

/// First intermediate asks about the entity over pool_1, second has the
/// entity as its answer over pool_2. The second call is skipped when the
/// first is rejected.
Outcome<std::pair<IntermediateQa, IntermediateQa>> gen_intermediates(Provider& provider, const PromptAssets& assets,
                                                                     const QuestionStyle& style,
                                                                     const std::string& entity,
                                                                     const CandidatePool& pool_1,
                                                                     const CandidatePool& pool_2, Trace& trace);

/// Parses "<multi-hop question | answer>".
Outcome<std::pair<std::string, std::string>> parse_combination(std::string_view response);

/// Merges two intermediates. The draft's sources are the union of both
/// intermediates' sources, first intermediate first.
Outcome<QaSample> combine(Provider& provider, const PromptAssets& assets, const QuestionStyle& style,
                          const IntermediateQa& q1, const IntermediateQa& q2, const std::string& entity,
                          const std::vector<Source>& sources_1, const std::vector<Source>& sources_2, Trace& trace);

/// split -> intermediates -> combine. Verification is left to the caller.
Outcome<QaSample> run_multihop(Provider& provider, const PromptAssets& assets, const CandidateSet& cand,
                               const QuestionStyle& style, Rng& rng, Trace& trace);

}  // namespace smmqg
