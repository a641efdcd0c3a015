#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fedsiam/matrix.hpp"
#include "fedsiam/rng.hpp"

namespace fedsiam {

enum class Activation { ReLU, Tanh };

// Ordered, named dense layers with flat weight storage. This is the unit the
// whole protocol operates on: divergence is measured per layer, layers are
// selected for upload per layer, and aggregation adds models element-wise.
struct LayeredParams {
    struct Layer {
        std::string name;
        int fan_in = 0;
        int fan_out = 0;
        std::vector<double> weights;  // row-major [fan_in x fan_out]
        std::vector<double> bias;     // [fan_out]

        std::size_t scalar_count() const { return weights.size() + bias.size(); }
    };

    std::vector<Layer> layers;
    Activation act = Activation::ReLU;

    int layer_count() const { return static_cast<int>(layers.size()); }
    std::size_t scalar_count() const;

    bool congruent_with(const LayeredParams& other) const;

    // In-place element-wise ops over weights and biases. Shapes must match.
    void fill(double value);
    void add_scaled(const LayeredParams& other, double scale);
    void scale(double factor);

    // Throws ShapeError naming the first offending layer if any entry is
    // non-finite.
    void check_finite(const std::string& context) const;
};

// Builds a ReLU/Tanh MLP skeleton: input_dim -> hidden[0] -> ... -> classes.
// Layer names are fc1, fc2, ... in order.
LayeredParams make_mlp(int input_dim, const std::vector<int>& hidden, int classes,
                       Activation act = Activation::ReLU);

// Glorot-style uniform init in [-sqrt(6/(fan_in+fan_out)), +...], biases zero.
void init_glorot(LayeredParams& params, Rng& rng);

// Gradients share the container layout of the model that produced them.
using Gradients = LayeredParams;

}  // namespace fedsiam
