#pragma once

#include "segens/aggregate.hpp"
#include "segens/align.hpp"
#include "segens/fuse.hpp"
#include "segens/io.hpp"
#include "segens/metrics.hpp"
#include "segens/pipeline.hpp"
#include "segens/pixagg.hpp"
#include "segens/remap.hpp"
#include "segens/synth.hpp"
#include "segens/types.hpp"
#include "segens/uncertainty.hpp"
