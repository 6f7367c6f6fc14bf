#pragma once

#include "tgda/ops_basic.hpp"
#include "tgda/ops_conv.hpp"
#include "tgda/ops_matmul.hpp"
#include "tgda/ops_norm.hpp"
