#pragma once

#include "faciesnet/checkpoint.hpp"
#include "faciesnet/config.hpp"
#include "faciesnet/errors.hpp"
#include "faciesnet/evaluation.hpp"
#include "faciesnet/gradcheck.hpp"
#include "faciesnet/layers.hpp"
#include "faciesnet/loss.hpp"
#include "faciesnet/network.hpp"
#include "faciesnet/random.hpp"
#include "faciesnet/synthgen.hpp"
#include "faciesnet/tensor.hpp"
#include "faciesnet/training.hpp"
#include "faciesnet/welldata.hpp"
