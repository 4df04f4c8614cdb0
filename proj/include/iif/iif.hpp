#pragma once

#include "iif/csv.hpp"
#include "iif/dataset.hpp"
#include "iif/detproxy.hpp"
#include "iif/error.hpp"
#include "iif/eval.hpp"
#include "iif/linalg.hpp"
#include "iif/margins.hpp"
#include "iif/model.hpp"
#include "iif/normal_quantile.hpp"
#include "iif/random.hpp"
#include "iif/serialize.hpp"
#include "iif/training.hpp"
