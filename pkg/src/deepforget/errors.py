class FormatError(ValueError):
    """A checkpoint or bundle file that cannot be read; ``position`` is the byte offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at byte {position})")
        self.position = position
