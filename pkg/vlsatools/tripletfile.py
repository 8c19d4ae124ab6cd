import numpy as np


class ArrayFile:
    """
    Base class for binary array file metadata
    """

    def __init__(self):
        pass


class TripletFile(ArrayFile):
    """
    Class for triplet sample-file metadata and methods to access
    metadata (record header layout, modality tags, dtypes, expected shapes).

    A sample file is three array records, video then text then audio. Each
    record is a 16-byte header, ``rank`` little-endian uint32 dims and the
    row-major little-endian payload.
    """

    file_suffix = ".vlsa"
    magic = b"VLSA"
    version = 1
    header_size = 16
    # Record order inside a sample file
    modalities = ["video", "text", "audio"]
    modality_tags = {"video": 1, "text": 2, "audio": 3}
    tag_modalities = {v: k for k, v in modality_tags.items()}
    # dtype codes stored in the header
    dtype_codes = {1: np.dtype("<f4"), 2: np.dtype("<i4")}
    modality_dtypes = {"video": 1, "text": 2, "audio": 1}
    header_dtype = np.dtype(
        [
            ("magic", "S4"),
            ("version", "<u2"),
            ("tag", "u1"),
            ("rank", "u1"),
            ("dtype", "u1"),
            ("reserved", "V7"),
        ]
    )
    dims_dtype = np.dtype("<u4")
    manifest_name = "manifest.json"
    manifest_version = 1

    def __init__(self):
        super().__init__()
        assert self.header_dtype.itemsize == self.header_size

    def make_sample_filename(self, sample_id: str) -> str:
        return f"{sample_id}{self.file_suffix}"

    def make_sample_id(self, index: int) -> str:
        return f"sample_{str(int(index)).zfill(6)}"

    def expected_shapes(self, data_config) -> dict:
        """
        Return the array shape of every modality for a data configuration

        Parameters
        ----------
        data_config (DataConfig): frame, token and spectrogram sizes

        Returns
        -------
        (dict): modality name -> shape tuple
        """
        return {
            "video": data_config.video_shape,
            "text": (data_config.max_tokens,),
            "audio": data_config.spectrogram_shape,
        }

    def dtype_for(self, modality: str) -> np.dtype:
        return self.dtype_codes[self.modality_dtypes[modality]]
