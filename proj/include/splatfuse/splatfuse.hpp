#pragma once

// Umbrella header: recurrent discrete-state Gaussian scene fusion.

#include "splatfuse/assoc.hpp"
#include "splatfuse/change.hpp"
#include "splatfuse/errors.hpp"
#include "splatfuse/fuse.hpp"
#include "splatfuse/fusion.hpp"
#include "splatfuse/geom.hpp"
#include "splatfuse/harness.hpp"
#include "splatfuse/image.hpp"
#include "splatfuse/io_json.hpp"
#include "splatfuse/metrics.hpp"
#include "splatfuse/registration.hpp"
#include "splatfuse/render.hpp"
#include "splatfuse/rng.hpp"
#include "splatfuse/scene.hpp"
#include "splatfuse/synth.hpp"
#include "splatfuse/voxel.hpp"
