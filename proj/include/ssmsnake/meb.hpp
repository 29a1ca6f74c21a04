#pragma once
// Scalar-gated state-space block over closed-contour tokens with depthwise
// circular convolution and a hidden state that can be carried between calls.

#include <random>
#include <string>

#include "ssmsnake/diffcore.hpp"

namespace ssmsnake {

struct MebConfig {
    std::size_t d_model = 64;
    std::size_t d_inner = 64;
    std::size_t d_state = 16;
    std::size_t conv_width = 5;
    std::size_t depth = 3;

    void validate() const;
};

// Registers one block under prefix: w_x,b_x, w_b,b_b, w_c,b_c, w_a,b_a,
// w_d,b_d, conv, d_skip, w_out,b_out. Projections act on row tokens (t W + b).
void init_meb_params(ParamStore& store, const std::string& prefix, const MebConfig& cfg, std::mt19937_64& rng);
// Blocks prefix.0 .. prefix.(depth-1).
void init_meb_stack_params(ParamStore& store, const std::string& prefix, const MebConfig& cfg, std::mt19937_64& rng);

struct MebResult {
    Var tokens;   // (N, d_model)
    Var z;        // (d_state, d_inner), Z_N
    Var x_tilde;  // (N, d_inner) after circular conv + sigmoid (last block for a stack)
};

// z_in may be an invalid Var, meaning "seed from token 0": Z_0 = B_0 X~_0^T.
MebResult meb_forward(Graph& g, ParamStore& store, const std::string& prefix, const MebConfig& cfg, Var tokens,
                      Var z_in);

// depth blocks applied in sequence with the state chained block to block.
MebResult meb_stack(Graph& g, ParamStore& store, const std::string& prefix, const MebConfig& cfg, Var tokens,
                    Var z_in);

}  // namespace ssmsnake
