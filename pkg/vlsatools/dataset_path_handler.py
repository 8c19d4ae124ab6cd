import logging
import os

from vlsatools.tripletfile import TripletFile

logger = logging.getLogger(__name__)


class DataPathHandler:
    """
    Base class for dataset directory path handler.
    Contains methods to build sample/manifest paths and check they exist.
    """

    file_format = None  # file metadata class instance

    def __init__(self, data_path):
        self.data_directory = os.fspath(data_path)

    def check_for_files(self, expected_paths: list):
        """
        Split paths into those that exist and those that don't

        Parameters
        ----------
        expected_paths: paths to check

        Returns
        -------
        paths: existing paths (input order)
        dont_exist: missing paths (input order)
        """
        dont_exist = [f for f in expected_paths if not os.path.exists(f)]
        if dont_exist:
            logger.warning("The following files were not found: %s", dont_exist)
        paths = [f for f in expected_paths if f not in dont_exist]
        return paths, dont_exist

    def build_manifest_path(self):
        """
        /path/to/dataset/manifest.json
        """
        return os.path.join(self.data_directory, self.file_format.manifest_name)

    def build_sample_path(self, sample_id: str):
        """
        /path/to/dataset/sample_000012.vlsa
        """
        return os.path.join(
            self.data_directory, self.file_format.make_sample_filename(sample_id)
        )

    def build_sample_paths(self, sample_ids: list) -> list:
        return [self.build_sample_path(s) for s in sample_ids]


class TripletDataPathHandler(DataPathHandler):
    file_format = TripletFile()
