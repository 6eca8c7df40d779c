#pragma once

#include "arz/box_qp.hpp"
#include "arz/config.hpp"
#include "arz/csv.hpp"
#include "arz/estimators.hpp"
#include "arz/linearization.hpp"
#include "arz/mhe.hpp"
#include "arz/model.hpp"
#include "arz/scaling.hpp"
#include "arz/scenarios.hpp"
#include "arz/sensing.hpp"
