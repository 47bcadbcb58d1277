#!/usr/bin/env python3
"""
Unit tests for setup validation.
Covers the failure scenarios the preflight is meant to catch before long bench runs.
"""

import os
import sys
import tempfile
import unittest
from collections import namedtuple
from unittest.mock import patch

from check_setup import SetupValidator


class TestSetupValidator(unittest.TestCase):
    """Test suite for SetupValidator class"""

    def setUp(self):
        """Create validator instance for each test"""
        self.tmp = tempfile.TemporaryDirectory()
        self.validator = SetupValidator(output_dir=os.path.join(self.tmp.name, "results"),
                                        data_dir=self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_python_version_check_success(self):
        """Test Python version check passes for the running interpreter"""
        result = self.validator.check_python_version()
        self.assertTrue(result)
        self.assertEqual(len(self.validator.errors), 0)

    def test_python_version_check_failure(self):
        """Test Python version check fails for old version"""
        VersionInfo = namedtuple('VersionInfo', ['major', 'minor', 'micro', 'releaselevel', 'serial'])
        mock_version = VersionInfo(3, 10, 0, 'final', 0)

        with patch('sys.version_info', mock_version):
            result = self.validator.check_python_version()
            self.assertFalse(result)
            self.assertIn('3.11+', self.validator.errors[0])

    def test_required_modules_check_success(self):
        """Test required modules check passes when all modules present"""
        result = self.validator.check_required_modules()
        self.assertTrue(result)
        self.assertEqual(len(self.validator.errors), 0)

    def test_required_modules_check_failure(self):
        """Test required modules check fails when module is missing"""
        with patch('importlib.util.find_spec', return_value=None):
            result = self.validator.check_required_modules()
            self.assertFalse(result)
            self.assertIn('Missing required Python modules', self.validator.errors[0])

    def test_thread_settings_unset(self):
        """Test unset thread variables pass"""
        with patch.dict(os.environ, {}, clear=True):
            self.assertTrue(self.validator.check_thread_settings())
        self.assertEqual(self.validator.warnings, [])

    def test_thread_settings_not_integer(self):
        """Test a non-integer thread count is an error"""
        with patch.dict(os.environ, {'RBSC_NUM_THREADS': 'many'}):
            self.assertFalse(self.validator.check_thread_settings())
        self.assertTrue(any('RBSC_NUM_THREADS' in e for e in self.validator.errors))

    def test_thread_settings_zero(self):
        """Test a zero thread count is an error"""
        with patch.dict(os.environ, {'RBSC_BLAS_THREADS': '0'}):
            self.assertFalse(self.validator.check_thread_settings())

    def test_blas_threads_warning(self):
        """Test multi-threaded BLAS is a warning only"""
        with patch.dict(os.environ, {'RBSC_NUM_THREADS': '4', 'RBSC_BLAS_THREADS': '8'}):
            self.assertTrue(self.validator.check_thread_settings())
        self.assertTrue(any('RBSC_BLAS_THREADS' in w for w in self.validator.warnings))

    def test_output_dir_created(self):
        """Test a missing output directory is created"""
        self.assertTrue(self.validator.check_output_dir())
        self.assertTrue(os.path.isdir(self.validator.output_dir))

    def test_output_dir_not_writable(self):
        """Test an unwritable output directory is an error"""
        with patch('pathlib.Path.mkdir', side_effect=PermissionError('read-only')):
            self.assertFalse(self.validator.check_output_dir())
        self.assertIn('not writable', self.validator.errors[0])

    def test_data_dir_warning(self):
        """Test a missing data directory is only a warning"""
        validator = SetupValidator(output_dir=self.tmp.name, data_dir=os.path.join(self.tmp.name, 'absent'))
        self.assertTrue(validator.check_data_dir())
        self.assertTrue(any('Data directory not found' in w for w in validator.warnings))

    def test_validate_all_success(self):
        """Test validate_all returns True when all checks pass"""
        with patch.object(self.validator, 'check_python_version', return_value=True), \
             patch.object(self.validator, 'check_required_modules', return_value=True), \
             patch.object(self.validator, 'check_thread_settings', return_value=True), \
             patch.object(self.validator, 'check_output_dir', return_value=True), \
             patch.object(self.validator, 'check_data_dir', return_value=True):
            self.assertTrue(self.validator.validate_all())

    def test_validate_all_failure(self):
        """Test validate_all returns False when any check fails"""
        with patch.object(self.validator, 'check_python_version', return_value=False), \
             patch.object(self.validator, 'check_required_modules', return_value=True), \
             patch.object(self.validator, 'check_thread_settings', return_value=True), \
             patch.object(self.validator, 'check_output_dir', return_value=True), \
             patch.object(self.validator, 'check_data_dir', return_value=True):
            self.assertFalse(self.validator.validate_all())

    def test_validate_all_exception_handling(self):
        """Test validate_all handles exceptions in checks"""
        with patch.object(self.validator, 'check_python_version', side_effect=Exception('Test error')), \
             patch.object(self.validator, 'check_required_modules', return_value=True), \
             patch.object(self.validator, 'check_thread_settings', return_value=True), \
             patch.object(self.validator, 'check_output_dir', return_value=True), \
             patch.object(self.validator, 'check_data_dir', return_value=True):
            self.assertFalse(self.validator.validate_all())
            self.assertTrue(any('Test error' in e for e in self.validator.errors))


def run_tests():
    """Run all tests and return success status"""
    suite = unittest.TestLoader().loadTestsFromModule(sys.modules[__name__])
    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)
    return result.wasSuccessful()


if __name__ == '__main__':
    success = run_tests()
    sys.exit(0 if success else 1)
