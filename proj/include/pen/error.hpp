/*
 * pendepth - Pose and expression normalization of facial depth images.
 *
 * Copyright 2026 The pendepth Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#ifndef PEN_ERROR_HPP_
#define PEN_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pen {

/**
 * Base of every exception thrown by the library. Catching this is enough to
 * handle all library failures; the derived types let callers tell them apart.
 */
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on the arguments was violated (dimension mismatch, bad range, ...).
class InvalidInput : public Error
{
public:
    using Error::Error;
};

/// Correspondences cannot determine a camera (too few points, coplanar, rank deficient).
class DegenerateConfiguration : public Error
{
public:
    using Error::Error;
};

/// An image with no valid (non-sentinel) pixels where at least one is required.
class EmptyImage : public Error
{
public:
    using Error::Error;
};

/**
 * A file could not be parsed. `field()` names the offending header field,
 * array or record so diagnostics can point at it.
 */
class ParseError : public Error
{
public:
    ParseError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field))
    {
    }

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Model file: missing or wrong magic / version.
class HeaderError : public ParseError
{
public:
    using ParseError::ParseError;
};

/// Model file: payload ended before the named array was complete.
class TruncatedError : public ParseError
{
public:
    using ParseError::ParseError;
};

/// Model file: triangle or landmark indices violate the mesh invariants.
class TopologyError : public ParseError
{
public:
    using ParseError::ParseError;
};

/// Any estimator failure. All estimators surface their errors as this kind.
class EstimationError : public Error
{
public:
    using Error::Error;
};

/// External estimator: command exited non-zero or could not be launched.
class ExternalCommandError : public EstimationError
{
public:
    using EstimationError::EstimationError;
};

/// External estimator: command did not finish within the configured timeout.
class ExternalTimeoutError : public EstimationError
{
public:
    using EstimationError::EstimationError;
};

/// External estimator: parameter file has the wrong number of values.
class ParamLengthError : public EstimationError
{
public:
    ParamLengthError(std::size_t expected, std::size_t actual)
        : EstimationError("parameter file has " + std::to_string(actual) + " values, expected " +
                          std::to_string(expected)),
          expected_(expected), actual_(actual)
    {
    }

    std::size_t expected() const noexcept { return expected_; }
    std::size_t actual() const noexcept { return actual_; }

private:
    std::size_t expected_;
    std::size_t actual_;
};

/// External estimator: a token in the parameter file is not a finite decimal.
class ParamParseError : public EstimationError
{
public:
    ParamParseError(std::size_t line, const std::string& what)
        : EstimationError("parameter file line " + std::to_string(line) + ": " + what), line_(line)
    {
    }

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Failure inside the normalization pipeline, labelled with the stage that failed.
class PipelineError : public Error
{
public:
    PipelineError(std::string stage, const std::string& what)
        : Error(stage + ": " + what), stage_(std::move(stage))
    {
    }

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

} /* namespace pen */

#endif /* PEN_ERROR_HPP_ */
