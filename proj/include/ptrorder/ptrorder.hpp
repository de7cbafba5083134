#pragma once

#include "ptrorder/checkpoint.hpp"
#include "ptrorder/config.hpp"
#include "ptrorder/corpus.hpp"
#include "ptrorder/decoding.hpp"
#include "ptrorder/encoders.hpp"
#include "ptrorder/errors.hpp"
#include "ptrorder/grad_check.hpp"
#include "ptrorder/graph.hpp"
#include "ptrorder/metrics.hpp"
#include "ptrorder/order.hpp"
#include "ptrorder/ptr_model.hpp"
#include "ptrorder/random.hpp"
#include "ptrorder/report.hpp"
#include "ptrorder/synthetic.hpp"
#include "ptrorder/tensor.hpp"
#include "ptrorder/training.hpp"
