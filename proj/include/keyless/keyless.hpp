#pragma once

// Umbrella header: keyless privacy-preserving inference over an additively
// homomorphic cipher, plus the model, wire, transport, and accounting
// pieces it rides on.

#include "keyless/activation.hpp"
#include "keyless/bigint.hpp"
#include "keyless/errors.hpp"
#include "keyless/fixedpoint.hpp"
#include "keyless/metrics.hpp"
#include "keyless/mlp.hpp"
#include "keyless/paillier.hpp"
#include "keyless/protocol.hpp"
#include "keyless/rng.hpp"
#include "keyless/transport.hpp"
#include "keyless/wire.hpp"
