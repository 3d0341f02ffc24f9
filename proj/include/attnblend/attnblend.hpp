#ifndef ATTNBLEND_ATTNBLEND_HPP
#define ATTNBLEND_ATTNBLEND_HPP

#include "attnblend/array.hpp"
#include "attnblend/attention_select.hpp"
#include "attnblend/caof.hpp"
#include "attnblend/error.hpp"
#include "attnblend/manifest.hpp"
#include "attnblend/metrics.hpp"
#include "attnblend/ot_core.hpp"
#include "attnblend/sasf.hpp"
#include "attnblend/synthetic.hpp"
#include "attnblend/tensor_io.hpp"

#endif  // ATTNBLEND_ATTNBLEND_HPP
