#pragma once

#include "canonvote/boxgen.hpp"
#include "canonvote/common.hpp"
#include "canonvote/eval.hpp"
#include "canonvote/geometry.hpp"
#include "canonvote/gridvote.hpp"
#include "canonvote/oracle.hpp"
#include "canonvote/pipeline.hpp"
#include "canonvote/point_cloud.hpp"
#include "canonvote/prediction.hpp"
#include "canonvote/scenegen.hpp"
