#pragma once

#include "linerf/common.hpp"
#include "linerf/net.hpp"
#include "linerf/geometry.hpp"
#include "linerf/encoding.hpp"
#include "linerf/field.hpp"
#include "linerf/image.hpp"
#include "linerf/parallel.hpp"
#include "linerf/render.hpp"
#include "linerf/diff_render.hpp"
#include "linerf/dataset.hpp"
#include "linerf/scenes.hpp"
#include "linerf/metrics.hpp"
#include "linerf/train.hpp"
#include "linerf/bounds.hpp"
#include "linerf/verify.hpp"
#include "linerf/config.hpp"
