import logging

import pytest

from .fixtures import asymmetric_cloud, composite_cloud, small_pipeline

logging.basicConfig(level=logging.DEBUG)
