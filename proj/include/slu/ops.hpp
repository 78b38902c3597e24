// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every function records one node on the tape of
// its first argument and registers the matching backward rule. Shape errors
// throw ShapeError naming the primitive and the offending shapes.

#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "slu/rng.hpp"
#include "slu/tape.hpp"

namespace slu::ad {

enum class Mode { train, eval };

// Linear algebra and structure.

/// [n x k] * [k x m] -> [n x m]
Var matmul(Var a, Var b);
/// Same shape, or b of rank 1 broadcast over the leading axes of a.
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product of equal shapes.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// Concatenate along the last axis; all other dims must agree.
Var concat(std::span<const Var> parts);
/// Columns [begin, end) of the last axis.
Var slice(Var a, std::size_t begin, std::size_t end);
Var reshape(Var a, Shape shape);
/// Sum of all elements, as a scalar.
Var sum(Var a);

// Nonlinearities.

Var sigmoid(Var a);
Var tanh(Var a);
/// Softmax over the last axis, max-subtracted.
Var softmax(Var a);
/// log-softmax over the last axis via log-sum-exp.
Var log_softmax(Var a);
/// Softmax over the last axis of [rows x n] restricted to positions where
/// mask is nonzero; masked positions get weight exactly 0. Each row needs at
/// least one unmasked position.
Var masked_softmax(Var a, std::span<const std::uint8_t> mask);

/// Identity forward; backward passes the negated upstream gradient.
Var grad_reverse(Var a);

/// Inverted dropout. Eval mode and rate 0 return the input node unchanged.
Var dropout(Var a, double rate, Mode mode, Rng& rng);

// Sequence helpers.

/// Rows of `table` [V x E] selected by ids -> [ids.size() x E].
Var embedding(Var table, std::span<const std::size_t> ids);
/// Step t of a [B x T x D] tensor -> [B x D].
Var time_step(Var a, std::size_t t);
/// Stack T tensors of shape [B x D] -> [B x T x D].
Var stack_steps(std::span<const Var> steps);
/// Per-row choice: row b of the result is a[b] where keep[b] != 0, else b[b].
/// Both inputs [B x D].
Var select_rows(std::span<const std::uint8_t> keep, Var a, Var b);
/// out[b] = sum_t alpha[b,t] * h[b,t,:] for alpha [B x T], h [B x T x D].
Var weighted_sum(Var alpha, Var h);
/// sum_i weight[i] * -logp[i, target[i]] over logp [N x L]. Rows with zero
/// weight are skipped entirely (their target is not read).
Var weighted_nll(Var logp, std::span<const std::size_t> targets, std::span<const double> weights);

// LSTM.

struct LstmWeights {
  Var input_weights;      // [E x 4H], gate blocks ordered i, f, g, o
  Var recurrent_weights;  // [H x 4H]
  Var bias;               // [4H]
};

struct LstmState {
  Var h;
  Var c;
};

/// Gate nonlinearities and state update from preactivations [B x 4H]:
/// c' = f*c + i*g, h' = o*tanh(c').
LstmState lstm_gates(Var preact, Var c_prev);

/// One LSTM step for input x [B x E] and previous state [B x H].
LstmState lstm_cell(Var x, Var h_prev, Var c_prev, const LstmWeights& w);

}  // namespace slu::ad
