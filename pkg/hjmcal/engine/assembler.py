"""Snapshot sheet assembler: combines report plots into one calibration overview image."""

from io import BytesIO

from PIL import Image, ImageDraw, ImageFont

TILE_W, TILE_H = 640, 480
BORDER, MARGIN, PADDING = 2, 8, 20
TITLE_H = 70
CAPTION_H = 28


def _font(size: int):
    try:
        return ImageFont.truetype("/usr/share/fonts/truetype/dejavu/DejaVuSans-Bold.ttf", size)
    except Exception:
        return ImageFont.load_default()


def grid_shape(n: int) -> tuple[int, int]:
    """(cols, rows) for n tiles: two columns up to four tiles, three beyond."""
    if n <= 0:
        return 1, 1
    cols = 2 if n <= 4 else 3
    return cols, (n + cols - 1) // cols


def assemble_snapshot(tiles: list[tuple[bytes, str]], title: str) -> bytes:
    """Lay out (png bytes, caption) tiles under a title. Returns PNG bytes."""
    cols, rows = grid_shape(len(tiles))
    tw = TILE_W + 2 * BORDER
    th = TILE_H + 2 * BORDER + CAPTION_H
    cw = cols * tw + (cols - 1) * MARGIN + 2 * PADDING
    ch = TITLE_H + rows * th + (rows - 1) * MARGIN + 2 * PADDING

    sheet = Image.new("RGB", (cw, ch), (255, 255, 255))
    draw = ImageDraw.Draw(sheet)

    tf = _font(30)
    bbox = draw.textbbox((0, 0), title, font=tf)
    draw.text(((cw - bbox[2]) // 2, 20), title, fill=(20, 20, 20), font=tf)
    cf = _font(15)

    for i, (png, caption) in enumerate(tiles):
        row, col = i // cols, i % cols
        img = Image.open(BytesIO(png)).convert("RGB")
        img.thumbnail((TILE_W, TILE_H))
        framed = Image.new("RGB", (tw, TILE_H + 2 * BORDER), (160, 160, 160))
        inner = Image.new("RGB", (TILE_W, TILE_H), (255, 255, 255))
        inner.paste(img, ((TILE_W - img.width) // 2, (TILE_H - img.height) // 2))
        framed.paste(inner, (BORDER, BORDER))

        x = PADDING + col * (tw + MARGIN)
        y = TITLE_H + PADDING + row * (th + MARGIN)
        sheet.paste(framed, (x, y))
        if caption:
            _draw_caption(draw, caption, x, y + TILE_H + 2 * BORDER, tw, cf)

    buf = BytesIO()
    # no timestamps or text chunks: identical tiles give identical bytes
    sheet.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def _draw_caption(draw, text, x, y, width, font):
    while len(text) > 1 and draw.textbbox((0, 0), text, font=font)[2] > width - 10:
        text = text[:-2] + "…"
    w = draw.textbbox((0, 0), text, font=font)[2]
    draw.text((x + (width - w) // 2, y + 5), text, fill=(60, 60, 60), font=font)
