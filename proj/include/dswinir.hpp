#pragma once

#include "dswinir/attention.hpp"
#include "dswinir/autograd.hpp"
#include "dswinir/block.hpp"
#include "dswinir/checkpoint.hpp"
#include "dswinir/checks.hpp"
#include "dswinir/config.hpp"
#include "dswinir/error.hpp"
#include "dswinir/image.hpp"
#include "dswinir/model.hpp"
#include "dswinir/nn.hpp"
#include "dswinir/offsets.hpp"
#include "dswinir/optim.hpp"
#include "dswinir/params.hpp"
#include "dswinir/rng.hpp"
#include "dswinir/tensor.hpp"
#include "dswinir/train.hpp"
