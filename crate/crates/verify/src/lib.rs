//! Holds the `acceptance` test target, which prints one PASS/FAIL line per
//! criterion and runs after every other suite in the workspace. The library
//! itself is empty.
