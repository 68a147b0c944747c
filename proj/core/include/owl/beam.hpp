#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "owl/tensor.hpp"

namespace owl {

template <typename Ctx>
struct BeamHypothesis {
  Ctx ctx;
  std::vector<int> tokens;
  Real log_prob = 0.0;
  bool finished = false;

  Real normalized() const {
    return tokens.empty() ? 0.0 : log_prob / static_cast<Real>(tokens.size());
  }
};

// Length-normalized beam search. `expand(ctx)` returns next-token log-probs
// for a live hypothesis; `advance(ctx, token)` extends a copied context.
// Each step keeps the `width` best (hypothesis, token) pairs by cumulative
// log-prob (ties: earlier hypothesis, then lower token id); pairs ending in
// `eos` retire. The winner maximises log_prob / length over retired and
// surviving hypotheses. width == 1 reproduces greedy decoding.
template <typename Ctx, typename Expand, typename Advance>
BeamHypothesis<Ctx> beam_search(Ctx root, Expand&& expand, Advance&& advance, std::size_t width,
                                std::size_t max_len, int eos) {
  struct Candidate {
    std::size_t hyp;
    int token;
    Real log_prob;
  };
  std::vector<BeamHypothesis<Ctx>> live;
  live.push_back({std::move(root), {}, 0.0, false});
  std::vector<BeamHypothesis<Ctx>> done;

  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Candidate> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const std::vector<Real> lp = expand(live[h].ctx);
      for (std::size_t t = 0; t < lp.size(); ++t) {
        cands.push_back({h, static_cast<int>(t), live[h].log_prob + lp[t]});
      }
    }
    const std::size_t keep = std::min(width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.hyp != b.hyp) return a.hyp < b.hyp;
                        return a.token < b.token;
                      });
    std::vector<BeamHypothesis<Ctx>> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cand = cands[c];
      BeamHypothesis<Ctx> hyp = live[cand.hyp];
      hyp.tokens.push_back(cand.token);
      hyp.log_prob = cand.log_prob;
      advance(hyp.ctx, cand.token);
      if (cand.token == eos) {
        hyp.finished = true;
        done.push_back(std::move(hyp));
      } else {
        next.push_back(std::move(hyp));
      }
    }
    live = std::move(next);
  }
  for (auto& h : live) done.push_back(std::move(h));
  std::size_t best = 0;
  for (std::size_t i = 1; i < done.size(); ++i) {
    if (done[i].normalized() > done[best].normalized()) best = i;
  }
  return std::move(done[best]);
}

}  // namespace owl
