#pragma once

#include "mvtrack/core_geometry.hpp"
#include "mvtrack/depth_render.hpp"
#include "mvtrack/evaluation.hpp"
#include "mvtrack/flow.hpp"
#include "mvtrack/io.hpp"
#include "mvtrack/joint_optimizer.hpp"
#include "mvtrack/least_squares.hpp"
#include "mvtrack/map_manager.hpp"
#include "mvtrack/pnp.hpp"
#include "mvtrack/synth_world.hpp"
#include "mvtrack/tracker.hpp"
