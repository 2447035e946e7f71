#pragma once

#include "safeplan/types.hpp"
#include "safeplan/dynamics.hpp"
#include "safeplan/environment.hpp"
#include "safeplan/planner.hpp"
#include "safeplan/trajectory.hpp"
#include "safeplan/controller.hpp"
#include "safeplan/qp.hpp"
#include "safeplan/safety_filter.hpp"
#include "safeplan/pipeline.hpp"
#include "safeplan/config.hpp"
#include "safeplan/run_io.hpp"
#include "safeplan/cli.hpp"
