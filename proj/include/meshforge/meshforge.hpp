#pragma once

#include "cameras.hpp"
#include "errors.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "image_io.hpp"
#include "loss.hpp"
#include "mesh.hpp"
#include "mesh_io.hpp"
#include "objective.hpp"
#include "optimize.hpp"
#include "raster.hpp"
#include "remote_scorer.hpp"
#include "subdiv.hpp"
#include "texel_map.hpp"
#include "types.hpp"
