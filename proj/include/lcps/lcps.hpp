#pragma once

// Umbrella header for the whole library.

#include "lcps/attention.hpp"
#include "lcps/classes.hpp"
#include "lcps/errors.hpp"
#include "lcps/geometry.hpp"
#include "lcps/io.hpp"
#include "lcps/losses.hpp"
#include "lcps/metrics.hpp"
#include "lcps/pipeline.hpp"
#include "lcps/postprocess.hpp"
#include "lcps/random.hpp"
#include "lcps/scene.hpp"
#include "lcps/semantic_region.hpp"
#include "lcps/tensor.hpp"
#include "lcps/voxel_grid.hpp"
